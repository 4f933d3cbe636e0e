"""
Experiment config validation: the JSON file is loaded into a WTForms form tree
and every error is reported by dotted field path
"""

from wtforms import Form, BooleanField, FieldList, FloatField, FormField, IntegerField, StringField
from wtforms.validators import AnyOf, ValidationError

from app.density.dynamics import BUILTIN_SYSTEMS
from app.density.types import CostForm, Norm


class Present:
    """Field must carry a value (configs have no formdata, so InputRequired does not apply)"""

    def __init__(self, message=None):
        self.message = message

    def __call__(self, form, field):
        if field.data is None or field.data == '':
            raise ValidationError(self.message or 'This field is required.')


class InRange:
    """Bounds check that skips absent optional values"""

    def __init__(self, low=None, high=None, exclusive_low=False, optional=False):
        self.low = low
        self.high = high
        self.exclusive_low = exclusive_low
        self.optional = optional

    def __call__(self, form, field):
        value = field.data
        if value is None:
            if self.optional:
                return
            raise ValidationError('This field is required.')
        if self.low is not None:
            if self.exclusive_low and not value > self.low:
                raise ValidationError(f'Must be > {self.low}.')
            if not self.exclusive_low and not value >= self.low:
                raise ValidationError(f'Must be >= {self.low}.')
        if self.high is not None and not value <= self.high:
            raise ValidationError(f'Must be <= {self.high}.')


class DictionaryForm(Form):
    per_dim_counts = FieldList(IntegerField(validators=[InRange(2)]), min_entries=1)
    sigma = FloatField(validators=[InRange(0, exclusive_low=True, optional=True)])
    sigma_factor = FloatField(default=0.4, validators=[InRange(0, exclusive_low=True)])
    delta = FloatField(validators=[InRange(0, exclusive_low=True)])
    quadrature_nodes = IntegerField(default=40, validators=[InRange(2)])
    lambda_form = StringField(default='analytic', validators=[AnyOf(['analytic', 'narrow'])])


class DataForm(Form):
    M = IntegerField(validators=[InRange(1)])
    M_local = IntegerField(default=400, validators=[InRange(2)])
    L_local = IntegerField(default=200, validators=[InRange(1)])
    local_radius = FloatField(validators=[InRange(0, exclusive_low=True, optional=True)])
    dt = FloatField(validators=[InRange(0, exclusive_low=True)])
    seed = IntegerField(default=0, validators=[InRange(0)])
    share_x_points = BooleanField(default=False)

    def validate_L_local(self, field):
        if field.data is not None and self.M_local.data is not None and field.data >= self.M_local.data:
            raise ValidationError('Must be < M_local (local data needs step-input pairs too).')


class OcpForm(Form):
    r = FloatField(validators=[InRange(0)])
    norm = StringField(default=Norm.L2.value, validators=[AnyOf([norm.value for norm in Norm])])
    cost_form = StringField(default=CostForm.PERSPECTIVE.value, validators=[AnyOf([form.value for form in CostForm])])
    q_weights = FieldList(FloatField(validators=[InRange(0)]), min_entries=1)
    m_choice = StringField(default='ones', validators=[AnyOf(['ones'])])

    def validate_r(self, field):
        if field.data == 0 and self.norm.data == Norm.L2.value:
            raise ValidationError('Must be > 0 for the l2 norm.')


class SolverForm(Form):
    tol = FloatField(default=1e-6, validators=[InRange(0, exclusive_low=True)])
    max_iter = IntegerField(default=200, validators=[InRange(1)])
    nsdmd_tol = FloatField(default=1e-10, validators=[InRange(0, exclusive_low=True)])
    nsdmd_max_iter = IntegerField(default=20000, validators=[InRange(1)])


class LocalForm(Form):
    Q = FieldList(FieldList(FloatField(validators=[Present()])), min_entries=0)
    r = FloatField(validators=[InRange(0, exclusive_low=True, optional=True)])
    gamma = FloatField(validators=[InRange(0, exclusive_low=True, optional=True)])


class SimulateForm(Form):
    horizon = FloatField(default=10.0, validators=[InRange(0, exclusive_low=True)])
    dt = FloatField(validators=[InRange(0, exclusive_low=True, optional=True)])
    x0 = FieldList(FieldList(FloatField(validators=[Present()])), min_entries=0)
    n_samples = IntegerField(default=0, validators=[InRange(0)])
    seed = IntegerField(default=1, validators=[InRange(0)])
    stability_threshold = FloatField(default=0.0, validators=[InRange(0, 1)])

    def validate_n_samples(self, field):
        if not field.data and not self.x0.data:
            raise ValidationError('Give an x0 list or a positive sample count.')


class CompareForm(Form):
    x0 = FieldList(FloatField(validators=[Present()]), min_entries=0)
    horizon = FloatField(default=10.0, validators=[InRange(0, exclusive_low=True)])


class PipelineForm(Form):
    name = StringField(validators=[Present()])
    system = StringField(validators=[Present(), AnyOf(sorted(BUILTIN_SYSTEMS))])
    domain_box = FieldList(FieldList(FloatField(validators=[Present()]), min_entries=2), min_entries=1)
    dictionary = FormField(DictionaryForm)
    data = FormField(DataForm)
    ocp = FormField(OcpForm)
    solver = FormField(SolverForm)
    local = FormField(LocalForm)
    simulate = FormField(SimulateForm)
    compare = FormField(CompareForm)

    def validate_name(self, field):
        if field.data and not all(char.isalnum() or char in '-_' for char in field.data):
            raise ValidationError('Only letters, digits, "-" and "_" are allowed.')

    def validate_domain_box(self, field):
        for k, interval in enumerate(field.data):
            if len(interval) != 2:
                raise ValidationError(f'Dimension {k} must be a [lo, hi] pair.')
            lo, hi = interval
            if lo is not None and hi is not None and not lo < hi:
                raise ValidationError(f'Degenerate interval in dimension {k}: lo must be < hi.')
