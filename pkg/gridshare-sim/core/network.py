"""
Radial Network Model

Feeder topology, linearized voltage sensitivities and the exact branch-flow
sweep used to check the linear model.

Voltages are handled as squared magnitudes in p.u.^2. Net consumption ``Z``
is given in kWh per netting period (one hour, so numerically kW) and is
converted to p.u. with the feeder's ``base_kw``.
"""
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from core.errors import (
    ConfigError,
    DimensionError,
    DomainError,
    PowerFlowDiverged,
    TopologyError,
)

logger = logging.getLogger("gridshare.network")

SLACK_BUS = 0

# Top-level keys of a feeder document
FEEDER_SECTIONS = frozenset({"name", "description", "base", "slack", "buses", "lines"})


@dataclass(frozen=True)
class Bus:
    """Non-slack bus with a fixed reactive consumption ``q`` (p.u.)."""

    id: int
    q: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class Line:
    """Line oriented away from the slack bus; ``r`` and ``x`` in p.u."""

    from_bus: int
    to_bus: int
    r: float
    x: float

    def __post_init__(self):
        if self.r < 0 or self.x < 0:
            raise DomainError(
                f"line {self.from_bus}->{self.to_bus} has negative impedance "
                f"(r={self.r}, x={self.x})"
            )


@dataclass(frozen=True)
class RadialNetwork:
    """Radial feeder rooted at the slack bus 0."""

    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    v0: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05
    base_kw: float = 1.0
    name: str = "feeder"

    def __post_init__(self):
        object.__setattr__(self, 'buses', tuple(sorted(self.buses, key=lambda b: b.id)))
        object.__setattr__(self, 'lines', tuple(self.lines))
        if not 0 < self.v_min < self.v_max:
            raise DomainError(f"voltage bounds must satisfy 0 < v_min < v_max, "
                              f"got {self.v_min}, {self.v_max}")
        if self.v0 <= 0:
            raise DomainError(f"slack voltage must be positive, got {self.v0}")
        if self.base_kw <= 0:
            raise DomainError(f"power base must be positive, got {self.base_kw}")

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def q(self) -> np.ndarray:
        return np.array([bus.q for bus in self.buses], dtype=float)

    def bus_label(self, bus_id: int) -> str:
        """Display name of a bus, falling back to its id."""
        if bus_id == SLACK_BUS:
            return "slack"
        bus = self.buses[bus_id - 1]
        return bus.name or str(bus.id)


@dataclass(frozen=True, eq=False)
class SensitivityMatrices:
    """Linearized voltage model ``v = -R Z + v_hat`` around the fixed reactive load.

    ``R`` and ``X`` are in p.u.; :attr:`R_kwh` rescales ``R`` for ``Z`` in kWh.
    ``v_upper`` and ``v_lower`` are the headroom vectors of the voltage box.
    """

    R: np.ndarray
    X: np.ndarray
    v_hat: np.ndarray
    v_upper: np.ndarray
    v_lower: np.ndarray
    base_kw: float = 1.0

    def __post_init__(self):
        for name in ('R', 'X', 'v_hat', 'v_upper', 'v_lower'):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def n_buses(self) -> int:
        return self.R.shape[0]

    @cached_property
    def R_kwh(self) -> np.ndarray:
        scaled = self.R / self.base_kw
        scaled.setflags(write=False)
        return scaled


@dataclass(frozen=True, eq=False)
class VoltageReport:
    """Per-bus voltage check against the linearized box."""

    squared: np.ndarray
    upper_margin: np.ndarray
    lower_margin: np.ndarray
    tol: float

    @property
    def feasible(self) -> np.ndarray:
        return (self.upper_margin >= -self.tol) & (self.lower_margin >= -self.tol)

    @property
    def all_feasible(self) -> bool:
        return bool(np.all(self.feasible))

    @property
    def violating_buses(self) -> List[int]:
        return [int(i) + 1 for i in np.flatnonzero(~self.feasible)]

    @property
    def max_violation(self) -> float:
        worst = max(float(np.max(-self.upper_margin, initial=0.0)),
                    float(np.max(-self.lower_margin, initial=0.0)))
        return max(worst, 0.0)

    @property
    def binding_upper(self) -> np.ndarray:
        return np.abs(self.upper_margin) <= self.tol

    @property
    def binding_lower(self) -> np.ndarray:
        return np.abs(self.lower_margin) <= self.tol


def feeder_graph(net: RadialNetwork) -> nx.Graph:
    """Undirected graph of the feeder including the slack bus."""
    graph = nx.Graph()
    graph.add_nodes_from(range(net.n_buses + 1))
    for line in net.lines:
        graph.add_edge(line.from_bus, line.to_bus, r=line.r, x=line.x)
    return graph


def _tree_structure(net: RadialNetwork) -> Tuple[np.ndarray, List[int]]:
    """Validate the topology; return parent of every bus and a BFS order."""
    n = net.n_buses
    if n == 0:
        raise TopologyError("feeder has no buses besides the slack bus")
    ids = [bus.id for bus in net.buses]
    if ids != list(range(1, n + 1)):
        raise TopologyError(f"bus ids must be exactly 1..{n}, got {ids}")
    if len(net.lines) != n:
        raise TopologyError(f"a radial feeder with {n} buses needs {n} lines, "
                            f"got {len(net.lines)}")
    for line in net.lines:
        for end in (line.from_bus, line.to_bus):
            if not 0 <= end <= n:
                raise TopologyError(f"line {line.from_bus}->{line.to_bus} "
                                    f"references unknown bus {end}")

    graph = feeder_graph(net)
    if not nx.is_tree(graph):
        raise TopologyError("feeder graph is not a tree (cycle or disconnected bus)")

    parent = np.full(n + 1, -1, dtype=int)
    order = [SLACK_BUS]
    for upstream, child in nx.bfs_edges(graph, SLACK_BUS):
        parent[child] = upstream
        order.append(child)

    for line in net.lines:
        if parent[line.to_bus] != line.from_bus:
            raise TopologyError(f"line {line.from_bus}->{line.to_bus} is not "
                                f"oriented away from the slack bus")
    return parent, order


def _line_parameters(net: RadialNetwork) -> Tuple[np.ndarray, np.ndarray]:
    """Resistance and reactance of the line feeding each bus, indexed by bus id."""
    r = np.zeros(net.n_buses + 1)
    x = np.zeros(net.n_buses + 1)
    for line in net.lines:
        r[line.to_bus] = line.r
        x[line.to_bus] = line.x
    return r, x


def build_sensitivities(net: RadialNetwork) -> SensitivityMatrices:
    """Assemble the linearized voltage model of a radial feeder.

    Entry ``(i, j)`` of ``R`` is twice the resistance shared by the paths
    from the slack bus to ``i`` and to ``j`` (likewise ``X``).

    Raises:
        TopologyError: feeder is not a tree oriented away from bus 0
    """
    parent, _ = _tree_structure(net)
    n = net.n_buses
    r, x = _line_parameters(net)

    # paths[i-1, k-1] = 1 when the line into bus k lies on the path to bus i
    paths = np.zeros((n, n))
    for bus in range(1, n + 1):
        node = bus
        while node != SLACK_BUS:
            paths[bus - 1, node - 1] = 1.0
            node = parent[node]

    R = 2.0 * (paths * r[1:]) @ paths.T
    X = 2.0 * (paths * x[1:]) @ paths.T
    v_hat = -X @ net.q + net.v0 ** 2
    v_upper = net.v_max ** 2 - v_hat
    v_lower = v_hat - net.v_min ** 2

    if np.any(v_upper < 0) or np.any(v_lower < 0):
        logger.warning("no-load voltage of %s lies outside [v_min, v_max] at buses %s",
                       net.name,
                       [int(i) + 1 for i in np.flatnonzero((v_upper < 0) | (v_lower < 0))])

    return SensitivityMatrices(R=R, X=X, v_hat=v_hat, v_upper=v_upper,
                               v_lower=v_lower, base_kw=net.base_kw)


def _bus_vector(sens: SensitivityMatrices, Z: Sequence[float]) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (sens.n_buses,):
        raise DimensionError(f"expected {sens.n_buses} bus injections, got shape {Z.shape}")
    return Z


def lin_voltages(sens: SensitivityMatrices, Z: Sequence[float]) -> np.ndarray:
    """Squared bus voltages under the linearized model for net consumption ``Z`` (kWh)."""
    Z = _bus_vector(sens, Z)
    return -sens.R_kwh @ Z + sens.v_hat


def check_voltage_feasibility(sens: SensitivityMatrices, Z: Sequence[float],
                              tol: float = 1e-7) -> VoltageReport:
    """Check ``-v_lower <= -R Z <= v_upper`` bus by bus (closed, with tolerance)."""
    Z = _bus_vector(sens, Z)
    drop = sens.R_kwh @ Z
    return VoltageReport(
        squared=sens.v_hat - drop,
        upper_margin=sens.v_upper + drop,
        lower_margin=sens.v_lower - drop,
        tol=tol,
    )


def exact_voltages(net: RadialNetwork, Z: Sequence[float], tol: float = 1e-10,
                   max_iter: int = 200) -> np.ndarray:
    """Squared bus voltages from the full branch-flow equations.

    Backward sweep accumulates branch flows including losses, forward sweep
    updates voltages, until the largest change drops below ``tol``.

    Raises:
        PowerFlowDiverged: no convergence within ``max_iter`` sweeps
    """
    parent, order = _tree_structure(net)
    n = net.n_buses
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (n,):
        raise DimensionError(f"expected {n} bus injections, got shape {Z.shape}")

    r, x = _line_parameters(net)
    p = np.concatenate(([0.0], Z / net.base_kw))
    q = np.concatenate(([0.0], net.q))
    downstream = order[:0:-1]

    v2 = np.full(n + 1, net.v0 ** 2)
    ell = np.zeros(n + 1)
    change = np.inf

    for iteration in range(1, max_iter + 1):
        P = p + r * ell
        Q = q + x * ell
        for bus in downstream:
            if parent[bus] != SLACK_BUS:
                P[parent[bus]] += P[bus]
                Q[parent[bus]] += Q[bus]

        updated = np.empty_like(v2)
        updated[SLACK_BUS] = net.v0 ** 2
        for bus in order[1:]:
            updated[bus] = (updated[parent[bus]]
                            - 2.0 * (r[bus] * P[bus] + x[bus] * Q[bus])
                            + (r[bus] ** 2 + x[bus] ** 2) * ell[bus])

        if not np.all(np.isfinite(updated)) or np.any(updated[1:] <= 0):
            raise PowerFlowDiverged(
                f"voltage collapse in branch-flow sweep at iteration {iteration}",
                context={'feeder': net.name},
            )

        change = float(np.max(np.abs(updated - v2)))
        v2 = updated
        sending = v2[np.maximum(parent, 0)]
        ell = np.where(parent >= 0, (P ** 2 + Q ** 2) / sending, 0.0)

        if change < tol:
            logger.debug("branch-flow sweep converged in %d iterations", iteration)
            return v2[1:].copy()

    raise PowerFlowDiverged(
        f"branch-flow sweep did not converge in {max_iter} iterations "
        f"(last change {change:.3e})",
        context={'feeder': net.name},
    )


def _number(record: Dict[str, Any], key: str, where: str, default: Any = None) -> float:
    value = record.get(key, default)
    if value is None:
        raise ConfigError("missing value", field=f"{where}.{key}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"not a number: {value!r}", field=f"{where}.{key}")


def parse_feeder(data: Dict[str, Any]) -> RadialNetwork:
    """Build a :class:`RadialNetwork` from a decoded feeder document.

    With a ``base`` section (``s_base_kva``, ``v_base_kv``) impedances are read
    in ohms (``r_ohm``/``x_ohm``) and reactive loads in kVAr (``q_kvar``) and
    converted to p.u.; otherwise ``r``, ``x`` and ``q`` are already p.u.
    Slack voltage and limits come from ``slack`` (``v0``, ``v_min``, ``v_max``).
    """
    if not isinstance(data, dict):
        raise ConfigError("feeder document must be a JSON object")
    unknown = set(data) - FEEDER_SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}", field="feeder")

    slack = data.get('slack', {})
    if not isinstance(slack, dict):
        raise ConfigError("must be an object", field="slack")
    unknown = set(slack) - {'v0', 'v_min', 'v_max'}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field="slack")

    base = data.get('base')
    if base is not None:
        s_base_kva = _number(base, 's_base_kva', 'base')
        v_base_kv = _number(base, 'v_base_kv', 'base')
        if s_base_kva <= 0 or v_base_kv <= 0:
            raise ConfigError("bases must be positive", field="base")
        z_base = v_base_kv ** 2 * 1000.0 / s_base_kva
        base_kw = s_base_kva
    else:
        z_base = 1.0
        base_kw = 1.0

    def impedance(record: Dict[str, Any], key: str, where: str) -> float:
        if base is not None and f"{key}_ohm" in record:
            return _number(record, f"{key}_ohm", where) / z_base
        return _number(record, key, where)

    def reactive(record: Dict[str, Any], where: str) -> float:
        if base is not None and 'q_kvar' in record:
            return _number(record, 'q_kvar', where) / base_kw
        return _number(record, 'q', where, default=0.0)

    buses_raw = data.get('buses')
    lines_raw = data.get('lines')
    if not isinstance(buses_raw, list) or not buses_raw:
        raise ConfigError("must be a non-empty list", field="buses")
    if not isinstance(lines_raw, list):
        raise ConfigError("must be a list", field="lines")

    buses = []
    for index, record in enumerate(buses_raw):
        where = f"buses[{index}]"
        if not isinstance(record, dict) or 'id' not in record:
            raise ConfigError("needs an integer id", field=where)
        buses.append(Bus(id=int(record['id']), q=reactive(record, where),
                         name=str(record.get('name', ''))))

    lines = []
    for index, record in enumerate(lines_raw):
        where = f"lines[{index}]"
        if not isinstance(record, dict) or 'from' not in record or 'to' not in record:
            raise ConfigError("needs 'from' and 'to' bus ids", field=where)
        try:
            lines.append(Line(from_bus=int(record['from']), to_bus=int(record['to']),
                              r=impedance(record, 'r', where),
                              x=impedance(record, 'x', where)))
        except DomainError as e:
            raise ConfigError(e.message, field=where)

    try:
        net = RadialNetwork(
            buses=tuple(buses),
            lines=tuple(lines),
            v0=_number(slack, 'v0', 'slack', default=1.0),
            v_min=_number(slack, 'v_min', 'slack', default=0.95),
            v_max=_number(slack, 'v_max', 'slack', default=1.05),
            base_kw=base_kw,
            name=str(data.get('name', 'feeder')),
        )
    except DomainError as e:
        raise ConfigError(e.message, field="slack")

    # Surface topology problems at load time
    _tree_structure(net)
    return net


def load_feeder(path: Union[str, Path]) -> RadialNetwork:
    """Load a feeder description from a JSON file."""
    path = Path(path)
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"feeder file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}")
    net = parse_feeder(data)
    logger.info("loaded feeder %s with %d buses from %s", net.name, net.n_buses, path)
    return net
