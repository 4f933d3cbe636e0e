from setuptools import setup, find_packages

with open('requirements.txt') as file:
    requirements = [line.strip() for line in file if line.strip() and not line.startswith('#')]

setup(
    name='density-ocp',
    version='0.1.0',
    description='Data-driven optimal control with density functions and Perron-Frobenius generators',
    packages=find_packages(exclude=['tests', 'tests.*']),
    py_modules=['config', 'density_ocp'],
    include_package_data=True,
    install_requires=requirements,
    python_requires='>=3.9',
    entry_points={
        'console_scripts': [
            'density-ocp = density_ocp:cli',
        ],
    },
)
