"""Scenario data model, config/CSV ingestion, price calibration and the no-storage baseline.

Slots are numbered ``1..K`` wherever they appear as *values* (start slots,
peak slots, CSV ``slot`` column) and are 0-based as array indices.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ScenarioError
from .storage import BatteryParams

PEAK_RATIO = 1.5
# accepts ``pv_3`` as well as the long form ``pv_kwh_user3``
_COLUMN = re.compile(r"^(pv|demand)_(?:kwh_user)?(\d+)$")


def _frozen(values: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    K: int
    delta_hours: float = 1.0

    def __post_init__(self) -> None:
        if int(self.K) != self.K or self.K < 1:
            raise ScenarioError(f"grid.K={self.K}: require a positive integer")
        if not self.delta_hours > 0:
            raise ScenarioError(f"grid.delta_hours={self.delta_hours}: require > 0")

    @property
    def horizon_hours(self) -> float:
        return self.K * self.delta_hours


@dataclass(frozen=True)
class PriceParams:
    phi: NDArray[np.float64]
    delta: NDArray[np.float64]
    peak_slots: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi", _frozen(self.phi))
        object.__setattr__(self, "delta", _frozen(self.delta))
        object.__setattr__(self, "peak_slots", frozenset(int(t) for t in self.peak_slots))
        if self.phi.shape != self.delta.shape or self.phi.ndim != 1:
            raise ScenarioError("prices.phi and prices.delta must be vectors of equal length")
        if np.any(~(self.phi > 0)):
            raise ScenarioError("prices.phi: every entry must be > 0")
        # the shipped two-slot fixture uses delta = 0, so only negatives are rejected
        if np.any(~(self.delta >= 0)):
            raise ScenarioError("prices.delta: every entry must be >= 0")


@dataclass(frozen=True)
class UserProfile:
    id: int
    pv: NDArray[np.float64]
    demand: NDArray[np.float64]
    participant: bool
    allowed_starts: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "pv", _frozen(self.pv))
        object.__setattr__(self, "demand", _frozen(self.demand))
        object.__setattr__(self, "allowed_starts", tuple(sorted(int(h) for h in self.allowed_starts)))
        if self.pv.shape != self.demand.shape:
            raise ScenarioError(f"user {self.id}: pv and demand lengths differ")
        if np.any(self.pv < 0) or np.any(self.demand < 0):
            raise ScenarioError(f"user {self.id}: negative pv or demand value")
        if not self.participant:
            if np.any(self.pv != 0):
                raise ScenarioError(f"user {self.id}: non-participants cannot have PV")
            if self.allowed_starts:
                raise ScenarioError(f"user {self.id}: non-participants have no start slots")
        else:
            K = self.pv.size
            if not self.allowed_starts:
                raise ScenarioError(f"user {self.id}: participant needs at least one allowed start")
            bad = [h for h in self.allowed_starts if not 1 <= h <= K]
            if bad:
                raise ScenarioError(f"user {self.id}: allowed_starts {bad} outside 1..{K}")
            if len(set(self.allowed_starts)) != len(self.allowed_starts):
                raise ScenarioError(f"user {self.id}: duplicate allowed_starts")

    @property
    def surplus(self) -> NDArray[np.float64]:
        return self.pv - self.demand


@dataclass(frozen=True)
class Scenario:
    grid: TimeGrid
    prices: PriceParams
    users: tuple[UserProfile, ...]
    battery: BatteryParams
    name: str = "scenario"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "users", tuple(self.users))
        K = self.grid.K
        if self.prices.phi.size != K:
            raise ScenarioError(f"prices have {self.prices.phi.size} slots, grid has K={K}")
        for u in self.users:
            if u.pv.size != K:
                raise ScenarioError(f"user {u.id}: profile has {u.pv.size} slots, grid has K={K}")
        ids = [u.id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate user ids")
        if not any(u.participant for u in self.users):
            raise ScenarioError("scenario needs at least one participating user")

    @property
    def K(self) -> int:
        return self.grid.K

    @property
    def participants(self) -> tuple[UserProfile, ...]:
        return tuple(u for u in self.users if u.participant)

    @property
    def non_participants(self) -> tuple[UserProfile, ...]:
        return tuple(u for u in self.users if not u.participant)

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.participants)

    @property
    def N(self) -> int:
        return len(self.non_participants)

    @property
    def surplus_matrix(self) -> NDArray[np.float64]:
        """Participants' surplus, shape ``(I, K)``."""
        return np.array([u.surplus for u in self.participants]).reshape(self.I, self.K)

    @property
    def nonparticipant_load(self) -> NDArray[np.float64]:
        load = np.zeros(self.K)
        for u in self.non_participants:
            load += u.demand
        return load

    @property
    def allowed_starts(self) -> list[tuple[int, ...]]:
        return [u.allowed_starts for u in self.participants]

    def with_prices(self, prices: PriceParams) -> "Scenario":
        return Scenario(self.grid, prices, self.users, self.battery, self.name, dict(self.meta))

    def with_battery(self, battery: BatteryParams) -> "Scenario":
        return Scenario(self.grid, self.prices, self.users, battery, self.name, dict(self.meta))

    def validate_profile(self, h: Sequence[int]) -> tuple[int, ...]:
        h = tuple(int(v) for v in h)
        if len(h) != self.I:
            raise ScenarioError(f"action profile has {len(h)} entries, expected I={self.I}")
        for u, hn in zip(self.participants, h):
            if hn not in u.allowed_starts:
                raise ScenarioError(f"user {u.id}: start {hn} not in allowed {list(u.allowed_starts)}")
        return h


def surplus(user: UserProfile, t: int) -> float:
    """Surplus ``g - e`` of ``user`` in 1-based slot ``t``; ``>= 0`` means a surplus user."""
    if not 1 <= t <= user.pv.size:
        raise ScenarioError(f"slot {t} outside 1..{user.pv.size}")
    return float(user.pv[t - 1] - user.demand[t - 1])


def active_set(h: Sequence[int], t: int, ids: Sequence[int] | None = None) -> set[int]:
    """Participants already trading at slot ``t`` (those with ``h_n <= t``).

    ``ids`` labels the entries of ``h``; positions ``0..I-1`` are returned when omitted.
    """
    ids = list(range(len(h))) if ids is None else list(ids)
    return {i for i, hn in zip(ids, h) if hn <= t}


def active_mask(h: Sequence[int], K: int) -> NDArray[np.bool_]:
    """Boolean matrix ``(I, K)``; entry ``[n, t-1]`` is true when ``h_n <= t``."""
    slots = np.arange(1, K + 1)
    return np.asarray(h, dtype=int)[:, None] <= slots[None, :]


def baseline_loads(scenario: Scenario) -> NDArray[np.float64]:
    """Per-user grid load without storage, shape ``(len(users), K)``; exports are negative."""
    return np.array([u.demand - u.pv for u in scenario.users]).reshape(len(scenario.users), scenario.K)


def baseline_solve(scenario: Scenario) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Daily cost of every user and the total load when nobody trades with the storage.

    Surplus is sold to the grid at the same price ``p_t = phi_t L_t + delta_t``.
    """
    loads = baseline_loads(scenario)
    total = loads.sum(axis=0)
    price = scenario.prices.phi * total + scenario.prices.delta
    return loads @ price, total


def calibrate_prices(
    base_phi_offpeak: float,
    peak_slots: Iterable[int],
    target_avg_price: float,
    scenario: Scenario,
) -> PriceParams:
    """Peak ``phi`` is 1.5x off-peak; a constant ``delta`` matches the mean baseline price."""
    K = scenario.K
    peak = frozenset(int(t) for t in peak_slots)
    if any(not 1 <= t <= K for t in peak):
        raise ScenarioError(f"peak slots must lie in 1..{K}")
    if not target_avg_price > 0:
        raise ScenarioError("target_avg_price must be > 0")
    if not base_phi_offpeak > 0:
        raise ScenarioError("phi_offpeak must be > 0")
    phi = np.full(K, float(base_phi_offpeak))
    for t in peak:
        phi[t - 1] *= PEAK_RATIO
    _, total = baseline_solve(scenario)
    d = float(target_avg_price - np.mean(phi * total))
    if d <= 0:
        raise ScenarioError(
            f"calibrated delta={d:.6g} <= 0: target average price {target_avg_price} "
            "is too low for this phi and load"
        )
    return PriceParams(phi=phi, delta=np.full(K, d), peak_slots=peak)


# --- ingestion -------------------------------------------------------------------


def read_profiles(path: Path, K: int) -> tuple[dict[int, NDArray], dict[int, NDArray]]:
    """Read ``slot,pv_<id>...,demand_<id>...`` rows (``pv_kwh_user<id>`` also accepted); returns pv and demand keyed by user id."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"profile CSV not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ScenarioError(f"{path}: empty CSV") from None
        if not header or header[0] != "slot":
            raise ScenarioError(f"{path}: header must start with 'slot'")
        cols: list[tuple[str, int]] = []
        for name in header[1:]:
            m = _COLUMN.match(name)
            if m is None:
                raise ScenarioError(f"{path}: unrecognised column {name!r}")
            cols.append((m.group(1), int(m.group(2))))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ScenarioError(
                    f"{path}:{lineno}: ragged row with {len(row)} values, header has {len(header)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ScenarioError(f"{path}:{lineno}: non-numeric value") from None
    if len(rows) != K:
        raise ScenarioError(f"{path}: {len(rows)} slot rows, expected K={K}")
    data = np.array(rows)
    if not np.array_equal(data[:, 0], np.arange(1, K + 1)):
        raise ScenarioError(f"{path}: slot column must read 1..{K} in order")
    pv: dict[int, NDArray] = {}
    demand: dict[int, NDArray] = {}
    for j, (kind, uid) in enumerate(cols, start=1):
        target = pv if kind == "pv" else demand
        if uid in target:
            raise ScenarioError(f"{path}: duplicate column {kind}_{uid}")
        if np.any(data[:, j] < 0):
            raise ScenarioError(f"{path}: negative value in column {kind}_{uid}")
        target[uid] = data[:, j]
    return pv, demand


def scenario_from_dict(cfg: dict, base_dir: Path | str = ".", name: str = "scenario") -> Scenario:
    base_dir = Path(base_dir)
    try:
        g = cfg["grid"]
        grid = TimeGrid(K=int(g["K"]), delta_hours=float(g.get("delta_hours", 1.0)))
        b = cfg["battery"]
        battery = BatteryParams(
            capacity=float(b["capacity"]),
            q0=float(b["q0"]),
            tau=float(b.get("tau", 1.0)),
            beta_plus=float(b.get("beta_plus", 1.0)),
            beta_minus=float(b.get("beta_minus", 1.0)),
        )
        u = cfg["users"]
        pv, demand = read_profiles(base_dir / u["profiles_csv"], grid.K)
        participant_ids = [int(i) for i in u["participant_ids"]]
        starts_cfg = u.get("allowed_starts", list(range(1, grid.K + 1)))
    except KeyError as exc:
        raise ScenarioError(f"config missing key {exc}") from None

    for uid in pv:
        if uid not in participant_ids:
            raise ScenarioError(f"pv column for user {uid}, who is not a participant")
    users = []
    for uid in sorted(demand):
        part = uid in participant_ids
        if part and uid not in pv:
            raise ScenarioError(f"participant {uid} has no pv_{uid} column")
        if part:
            starts = starts_cfg.get(str(uid), starts_cfg.get(uid)) if isinstance(starts_cfg, dict) else starts_cfg
            if starts is None:
                raise ScenarioError(f"no allowed_starts for participant {uid}")
        else:
            starts = ()
        users.append(
            UserProfile(
                id=uid,
                pv=pv.get(uid, np.zeros(grid.K)),
                demand=demand[uid],
                participant=part,
                allowed_starts=tuple(starts),
            )
        )
    missing = set(participant_ids) - set(demand)
    if missing:
        raise ScenarioError(f"participants {sorted(missing)} have no demand column")

    p = cfg.get("prices", {})
    if "phi" in p:
        prices = PriceParams(
            phi=np.asarray(p["phi"], dtype=float),
            delta=np.asarray(p["delta"], dtype=float),
            peak_slots=frozenset(p.get("peak_slots", ())),
        )
        scenario = Scenario(grid, prices, tuple(users), battery, name=name)
    else:
        # placeholder prices so the baseline load can be computed, then calibrate
        placeholder = PriceParams(phi=np.ones(grid.K), delta=np.ones(grid.K))
        scenario = Scenario(grid, placeholder, tuple(users), battery, name=name)
        try:
            prices = calibrate_prices(
                float(p["phi_offpeak"]), p.get("peak_slots", ()), float(p["target_avg_price"]), scenario
            )
        except KeyError as exc:
            raise ScenarioError(f"config prices missing key {exc}") from None
        scenario = scenario.with_prices(prices)
    return scenario


def load_scenario(config_path: Path | str) -> Scenario:
    config_path = Path(config_path)
    if not config_path.is_file():
        raise ScenarioError(f"config file not found: {config_path}")
    try:
        cfg = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{config_path}: invalid JSON ({exc})") from None
    scenario = scenario_from_dict(cfg, config_path.parent, name=cfg.get("name", config_path.stem))
    digest = hashlib.sha256(config_path.read_bytes())
    digest.update((config_path.parent / cfg["users"]["profiles_csv"]).read_bytes())
    scenario.meta["config_hash"] = digest.hexdigest()
    scenario.meta["config_path"] = str(config_path)
    return scenario


def bundled_path(filename: str) -> Path:
    return Path(str(resources.files("cestrade") / "data" / filename))


def fixture_s1() -> Scenario:
    """Two participants, two slots, lossless 100 kWh battery; every equilibrium checkable by hand."""
    return load_scenario(bundled_path("s1.json"))


def default_scenario() -> Scenario:
    """Ten households (six with PV) over 24 one-hour slots with an 80 kWh community battery."""
    return load_scenario(bundled_path("default.json"))


def hetero3_scenario() -> Scenario:
    """Three participants with different PV and demand sizes plus two plain grid users."""
    return load_scenario(bundled_path("hetero3.json"))
