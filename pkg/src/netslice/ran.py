"""Radio access model: user placement, log-distance path loss, link budget and PRB accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, InvariantViolation


@dataclass(frozen=True)
class RegionSpec:
    width: float
    height: float
    cell_positions: tuple = ((0.0, 0.0),)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ConfigurationError("region must have positive width and height")
        if len(self.cell_positions) == 0:
            raise ConfigurationError("region needs at least one cell")
        for x, y in self.cell_positions:
            if not (0 <= x <= self.width and 0 <= y <= self.height):
                raise ConfigurationError(f"cell position ({x}, {y}) outside region")
        object.__setattr__(
            self, "cell_positions", tuple((float(x), float(y)) for x, y in self.cell_positions)
        )


@dataclass(frozen=True)
class PathLossParams:
    pl_d0: float = 40.0
    d0: float = 1.0
    exponent_n: float = 3.5
    shadowing_sigma: float = 0.0

    def __post_init__(self):
        if not self.d0 > 0:
            raise ConfigurationError("reference distance d0 must be positive")
        if not self.exponent_n > 0:
            raise ConfigurationError("path loss exponent must be positive")
        if self.shadowing_sigma < 0:
            raise ConfigurationError("shadowing sigma must be non-negative")


@dataclass(frozen=True)
class RadioParams:
    noise_density: float = -174.0  # dBm/Hz
    ue_noise_figure: float = 7.0  # dB

    def __post_init__(self):
        if not self.noise_density < 0:
            raise ConfigurationError("noise density must be below 0 dBm/Hz")


@dataclass
class Cell:
    id: str
    position: tuple
    tx_power: float = 43.0  # dBm; -inf switches the cell off
    total_prbs: int = 100
    prb_bandwidth: float = 180e3
    prb_reservation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.total_prbs < 1:
            raise ConfigurationError("a cell needs at least one PRB")
        if math.isnan(self.tx_power) or self.tx_power == math.inf:
            raise ConfigurationError("tx_power must be finite (or -inf for off)")
        check_reservations(self.prb_reservation)

    def reserved_prbs(self, slice_id):
        # 1e-9 guards against 0.1 * 100 == 10.000000000000002 style drift
        return int(math.floor(self.prb_reservation.get(slice_id, 0.0) * self.total_prbs + 1e-9))


@dataclass
class UserTerminal:
    id: str
    position: tuple
    slice_id: str
    serving_cell: str
    assigned_prbs: int = 0
    shadow_seed: int = 0


def check_reservations(reservation):
    for frac in reservation.values():
        if not 0.0 <= frac <= 1.0 + 1e-12:
            raise InvariantViolation(f"reservation fraction {frac} outside [0, 1]")
    if sum(reservation.values()) > 1.0 + 1e-9:
        raise InvariantViolation("PRB reservations sum above 1")


def build_cells(region, tx_power=43.0, total_prbs=100, prb_bandwidth=180e3):
    return {
        f"c{i}": Cell(f"c{i}", pos, tx_power, total_prbs, prb_bandwidth)
        for i, pos in enumerate(region.cell_positions)
    }


def nearest_cell(position, region):
    """Index of the closest cell; ties go to the lower index."""
    x, y = position
    dists = [math.hypot(x - cx, y - cy) for cx, cy in region.cell_positions]
    return int(np.argmin(dists))


def place_users(count, region, seed, slice_id="", poisson=False, id_prefix=None):
    """Drop ``count`` users uniformly over the region and attach each to its nearest cell.

    With ``poisson=True`` the number of users is itself Poisson(count)
    distributed, i.e. a true homogeneous PPP of that mean. Otherwise the
    count is fixed (a binomial point process). Draws are prefix-stable:
    the first m users for a seed are the same for any count >= m.
    """
    if region is None:
        raise ConfigurationError("cannot place users without a region")
    if count < 0:
        raise DomainError("user count must be non-negative")
    rng = np.random.default_rng(seed)
    if poisson:
        count = int(np.random.default_rng([seed, 1]).poisson(count))
    xy = rng.uniform(size=(count, 2)) * np.array([region.width, region.height])
    shadow_seeds = np.random.default_rng([seed, 2]).integers(0, 2**31, size=count)
    prefix = id_prefix if id_prefix is not None else (f"{slice_id}-" if slice_id else "u")
    users = []
    for i in range(count):
        pos = (float(xy[i, 0]), float(xy[i, 1]))
        users.append(
            UserTerminal(
                id=f"{prefix}{i:03d}",
                position=pos,
                slice_id=slice_id,
                serving_cell=f"c{nearest_cell(pos, region)}",
                shadow_seed=int(shadow_seeds[i]),
            )
        )
    return users


def path_loss_db(distance, params, seed=0):
    """PL(d) = PL(d0) + 10 n log10(d / d0) + X_sigma, X_sigma ~ N(0, sigma^2) drawn from ``seed``."""
    if not distance > 0:
        raise DomainError(f"distance must be positive, got {distance}")
    pl = params.pl_d0 + 10.0 * params.exponent_n * math.log10(distance / params.d0)
    if params.shadowing_sigma > 0:
        pl += float(np.random.default_rng(seed).normal(0.0, params.shadowing_sigma))
    return pl


def noise_power_dbm(n_prbs, prb_bandwidth, radio):
    return radio.noise_density + 10.0 * math.log10(n_prbs * prb_bandwidth) + radio.ue_noise_figure


def snr_linear(user, cell, pl, radio, n_prbs):
    """Received power over thermal noise spanning the ``n_prbs`` assigned PRBs.

    The full cell transmit power is credited to the user's allocation;
    there is no inter-cell interference term.
    """
    if n_prbs < 1:
        raise DomainError("SNR needs at least one PRB")
    if cell.tx_power == -math.inf:
        return 0.0
    d = math.hypot(user.position[0] - cell.position[0], user.position[1] - cell.position[1])
    # users sitting on the mast are clamped to the reference distance
    d = max(d, pl.d0)
    rx = cell.tx_power - path_loss_db(d, pl, user.shadow_seed)
    return 10.0 ** ((rx - noise_power_dbm(n_prbs, cell.prb_bandwidth, radio)) / 10.0)


def achievable_rate(n_prbs, prb_bandwidth, snr):
    if snr < 0:
        raise DomainError("SNR must be non-negative")
    if n_prbs < 0:
        raise DomainError("PRB count must be non-negative")
    if n_prbs == 0 or snr == 0:
        return 0.0
    return n_prbs * prb_bandwidth * math.log2(1.0 + snr)


def prbs_needed(demand, snr, prb_bandwidth):
    """Smallest PRB count whose rate at a fixed ``snr`` meets ``demand``; None if snr is 0."""
    if demand <= 0:
        raise DomainError("demand must be positive")
    if snr < 0:
        raise DomainError("SNR must be non-negative")
    if snr == 0:
        return None
    per_prb = achievable_rate(1, prb_bandwidth, snr)
    n = max(1, math.ceil(demand / per_prb))
    # ceil on a float quotient can land one off either way
    while n > 1 and achievable_rate(n - 1, prb_bandwidth, snr) >= demand:
        n -= 1
    while achievable_rate(n, prb_bandwidth, snr) < demand:
        n += 1
    return n


def user_rate(user, cell, pl, radio, n_prbs):
    if n_prbs <= 0:
        return 0.0
    return achievable_rate(n_prbs, cell.prb_bandwidth, snr_linear(user, cell, pl, radio, n_prbs))


def min_prbs_for_rate(user, cell, pl, radio, demand, max_prbs=None):
    """Smallest allocation meeting ``demand`` when SNR itself depends on the allocation size.

    Rate n*B*log2(1 + c/n) is increasing in n, so a bisection over
    [1, max_prbs] is exact. Returns None when even ``max_prbs`` falls short.
    """
    hi = cell.total_prbs if max_prbs is None else max_prbs
    if hi < 1 or user_rate(user, cell, pl, radio, hi) < demand:
        return None
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if user_rate(user, cell, pl, radio, mid) >= demand:
            hi = mid
        else:
            lo = mid + 1
    return lo


def prb_utilization(cell, users):
    used = sum(u.assigned_prbs for u in users if u.serving_cell == cell.id)
    if used > cell.total_prbs:
        raise InvariantViolation(f"cell {cell.id} oversubscribed: {used} > {cell.total_prbs}")
    return used / cell.total_prbs


def ran_fits(cell, usage_by_slice):
    """Whether per-slice PRB usage respects the cell's reservations.

    Each slice owns floor(fraction * total) PRBs; usage above a slice's
    own reservation spills into the unreserved shared pool.
    """
    reserved = {s: cell.reserved_prbs(s) for s in cell.prb_reservation}
    shared = cell.total_prbs - sum(reserved.values())
    spill = sum(max(0, used - reserved.get(s, 0)) for s, used in usage_by_slice.items())
    return spill <= shared
