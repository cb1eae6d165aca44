"""scikit-learn style front ends: a point sampler and a weighted least-squares regressor."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_observations, check_points, check_positive_int, check_weights
from .recovery import solve_weighted
from .sparsifier import SelectionConfig, select
from .systems import IndexOrdering, UnivariateBasis, build_frame_system, tensor_evaluate


def _basis_and_ordering(family, ordering, dimension):
    basis = UnivariateBasis(family)
    return basis, IndexOrdering(ordering, dimension, basis.integer_frequencies)


class DualBarrierSampler(BaseEstimator):
    """Select ``n`` weighted points for a tensor basis on ``[0, 1]^d``.

    The lower family is the first ``m`` basis functions of ``ordering``; the
    upper family holds ranks ``m+1..N`` scaled per ``upper_scaling``. Pass a
    prebuilt ``system`` to bypass the basis parameters. ``fit(X)`` restricts
    the search to the rows of ``X``; ``fit()`` samples from the measure.

    Attributes
    ----------
    points_, weights_ : selected points and weights
    run_ : the full :class:`~dualbarrier.sparsifier.SelectionRun`
    certificate_ : its frame-bound report
    system_ : the function system used
    """

    def __init__(self, family="fourier", ordering="univariate", dimension=1, m=4, n=None,
                 N=None, upper_scaling="rank_power", t=1.0, epsilon_mode=None,
                 weight_rule="minimal", oracle="iid_measure", retest_previous=False,
                 max_proposals=None, random_state=0, system=None):
        self.family = family
        self.ordering = ordering
        self.dimension = dimension
        self.m = m
        self.n = n
        self.N = N
        self.upper_scaling = upper_scaling
        self.t = t
        self.epsilon_mode = epsilon_mode
        self.weight_rule = weight_rule
        self.oracle = oracle
        self.retest_previous = retest_previous
        self.max_proposals = max_proposals
        self.random_state = random_state
        self.system = system

    def _build_system(self):
        if self.system is not None:
            return self.system
        m = check_positive_int(self.m, "m")
        N = 4 * m if self.N is None else check_positive_int(self.N, "N")
        basis, ordering = _basis_and_ordering(self.family, self.ordering, self.dimension)
        return build_frame_system(basis, ordering, m, N, scaling=self.upper_scaling, t=self.t)

    def fit(self, X=None, y=None):
        system = self._build_system()
        n = 2 * system.m if self.n is None else check_positive_int(self.n, "n")
        oracle, candidates = self.oracle, None
        if X is not None:
            candidates = check_points(X, system.dim)
            oracle = "finite_scan"
        cfg = SelectionConfig(n=n, epsilon_mode=self.epsilon_mode, weight_rule=self.weight_rule,
                              retest_previous=self.retest_previous, oracle=oracle,
                              candidates=candidates, seed=int(self.random_state or 0),
                              max_proposals=self.max_proposals)
        run = select(cfg, system)
        self.system_ = system
        self.run_ = run
        self.points_ = run.points
        self.weights_ = run.weights
        self.certificate_ = run.certificate
        return self


class WeightedLeastSquaresRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit in the span of the first ``m`` basis functions.

    ``fit(X, y, sample_weight)`` solves the weighted normal equations
    (plain least squares when ``sample_weight`` is omitted) and raises
    :class:`~dualbarrier.recovery.RankDeficientError` if the points do not
    determine the fit. Complex observations give complex predictions.
    """

    def __init__(self, family="fourier", ordering="univariate", dimension=1, m=4):
        self.family = family
        self.ordering = ordering
        self.dimension = dimension
        self.m = m

    def _features(self, X):
        return tensor_evaluate(self.basis_, self.indices_, check_points(X, self.dimension))

    def fit(self, X, y, sample_weight=None):
        m = check_positive_int(self.m, "m")
        self.basis_, order = _basis_and_ordering(self.family, self.ordering, self.dimension)
        self.indices_ = order.first(m)
        X = check_points(X, self.dimension)
        y = check_observations(y, X.shape[0])
        w = np.ones(X.shape[0]) if sample_weight is None else check_weights(sample_weight, X.shape[0])
        self.coef_ = solve_weighted(self._features(X), y, w)
        self.complex_output_ = bool(np.iscomplexobj(y))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        out = self._features(X) @ self.coef_
        return out if self.complex_output_ else np.real(out)
