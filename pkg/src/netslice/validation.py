"""Input checks shared by the estimators, in the spirit of ``sklearn.utils.validation``."""

from sklearn.exceptions import NotFittedError

from .errors import ConfigurationError, OracleCapError
from .slicing import NetworkState


def check_state(state, fresh=True):
    """Validate a scenario handed to a controller and return it.

    ``fresh`` additionally requires that nothing has been admitted or
    embedded yet.
    """
    if not isinstance(state, NetworkState):
        raise TypeError(f"expected a NetworkState, got {type(state).__name__}")
    for uid, u in state.users.items():
        if u.serving_cell not in state.cells:
            raise ConfigurationError(f"user {uid} served by unknown cell {u.serving_cell}")
        if u.slice_id not in state.slices:
            raise ConfigurationError(f"user {uid} in unknown slice {u.slice_id}")
        if uid not in state.requests:
            raise ConfigurationError(f"user {uid} has no SFC request")
    if fresh and (state.decisions or state.topology.embeddings or any(u.assigned_prbs for u in state.users.values())):
        raise ConfigurationError("controller expects a fresh scenario (nothing admitted)")
    return state


def check_oracle_size(state, cap):
    n = len(state.users)
    if n > cap:
        raise OracleCapError(f"exhaustive search refused: {n} users exceeds cap {cap}")
    return n


def check_is_fitted(estimator, attribute="result_"):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. Call 'fit' with a scenario first."
        )
