from django import forms

from .bio_model import REVENUE_TAGS


class GrowthForm(forms.Form):
    r = forms.FloatField(required=False)
    family = forms.ChoiceField(choices=[('verhulst', 'Verhulst')], required=False)

    def clean_r(self):
        r = self.cleaned_data.get('r')
        if r is None:
            return 1.0
        if r <= 0:
            raise forms.ValidationError("Intrinsic growth rate must be positive.")
        return r

    def clean_family(self):
        return self.cleaned_data.get('family') or 'verhulst'


class CommunityForm(forms.Form):
    """Top-level scalars of a scenario config"""
    beta = forms.FloatField()

    def clean_beta(self):
        beta = self.cleaned_data['beta']
        if beta <= 0:
            raise forms.ValidationError("Discount rate must be positive.")
        return beta


class RevenueForm(forms.Form):
    tag = forms.ChoiceField(choices=[(tag, tag) for tag in REVENUE_TAGS])
    slope = forms.FloatField(required=False)
    a = forms.FloatField(required=False)
    b = forms.FloatField(required=False)
    p = forms.FloatField(required=False)
    scale = forms.FloatField(required=False)
    points = forms.JSONField(required=False)

    REQUIRED = {
        'linear': (),
        'quadratic': ('a', 'b'),
        'power': ('p',),
        'piecewise': ('points',),
    }

    def clean_points(self):
        points = self.cleaned_data.get('points')
        if points in (None, ''):
            return None
        try:
            pairs = [(float(u), float(y)) for u, y in points]
        except (TypeError, ValueError):
            raise forms.ValidationError("Points must be a list of [u, f(u)] pairs.")
        if len(pairs) < 2:
            raise forms.ValidationError("At least two points are required.")
        if any(b[0] <= a[0] for a, b in zip(pairs, pairs[1:])):
            raise forms.ValidationError("Point abscissae must be strictly increasing.")
        return [list(pair) for pair in pairs]

    def clean_p(self):
        p = self.cleaned_data.get('p')
        if p is not None and p <= 0:
            raise forms.ValidationError("Exponent must be positive.")
        return p

    def clean(self):
        cleaned = super().clean()
        tag = cleaned.get('tag')
        for name in self.REQUIRED.get(tag, ()):
            if cleaned.get(name) is None and name not in self.errors:
                self.add_error(name, f"Required for revenue tag '{tag}'.")
        return cleaned

    def params(self):
        """Keyword parameters of the revenue family, without unset fields"""
        tag = self.cleaned_data['tag']
        wanted = {
            'linear': ('slope',),
            'quadratic': ('a', 'b'),
            'power': ('p', 'scale'),
            'piecewise': ('points',),
        }[tag]
        return {name: self.cleaned_data[name] for name in wanted if self.cleaned_data.get(name) is not None}


class AgentForm(forms.Form):
    alpha_max = forms.FloatField()
    count = forms.IntegerField(required=False, min_value=1)

    def clean_alpha_max(self):
        alpha_max = self.cleaned_data['alpha_max']
        if alpha_max <= 0:
            raise forms.ValidationError("alpha_max must be positive.")
        return alpha_max

    def clean_count(self):
        return self.cleaned_data.get('count') or 1


class SolverForm(forms.Form):
    n_nodes = forms.IntegerField(required=False, min_value=3)
    revenue_nodes = forms.IntegerField(required=False, min_value=2)
    x_min = forms.FloatField(required=False)
    residual_tol = forms.FloatField(required=False)

    def clean_x_min(self):
        x_min = self.cleaned_data.get('x_min')
        if x_min is not None and not 0 < x_min < 1:
            raise forms.ValidationError("x_min must lie in (0, 1).")
        return x_min


class ScenarioSectionForm(forms.Form):
    """Command-specific settings; every field is optional"""
    x0 = forms.JSONField(required=False)
    epsilon = forms.FloatField(required=False)
    delta = forms.FloatField(required=False)
    horizon = forms.FloatField(required=False)
    dt = forms.FloatField(required=False)
    arrival_tol = forms.FloatField(required=False)
    community_nesting = forms.JSONField(required=False)
    pulse_epsilons = forms.JSONField(required=False)
    static_intensities = forms.JSONField(required=False)

    def _positive(self, name):
        value = self.cleaned_data.get(name)
        if value is not None and value <= 0:
            raise forms.ValidationError(f"{name} must be positive.")
        return value

    def clean_epsilon(self):
        return self._positive('epsilon')

    def clean_delta(self):
        return self._positive('delta')

    def clean_horizon(self):
        return self._positive('horizon')

    def clean_dt(self):
        return self._positive('dt')

    def clean_arrival_tol(self):
        return self._positive('arrival_tol')

    def _float_list(self, name):
        value = self.cleaned_data.get(name)
        if value in (None, ''):
            return None
        if isinstance(value, (int, float)):
            value = [value]
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise forms.ValidationError(f"{name} must be a number or a list of numbers.")

    def clean_x0(self):
        states = self._float_list('x0')
        if states is not None and any(not 0 < x < 1 for x in states):
            raise forms.ValidationError("Initial states must lie in (0, 1).")
        return states

    def clean_pulse_epsilons(self):
        return self._float_list('pulse_epsilons')

    def clean_static_intensities(self):
        return self._float_list('static_intensities')

    def clean_community_nesting(self):
        sizes = self.cleaned_data.get('community_nesting')
        if sizes in (None, ''):
            return None
        if not isinstance(sizes, list) or not all(isinstance(s, int) and s > 0 for s in sizes):
            raise forms.ValidationError("community_nesting must be a list of positive agent counts.")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise forms.ValidationError("community_nesting sizes must be strictly increasing.")
        return sizes
