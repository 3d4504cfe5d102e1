"""End-to-end experiment orchestration: scheme construction, compilation at
swept CNOT budgets, noisy simulation, tomography, mitigation, and plot-ready
tables.

A sweep budget is the total CNOT depth along one execution path; it is
split as evenly as possible over a scheme's unitary layers (remainder to
the later layers, which hold the harder terminal unitaries). Compilation
results are cached by (matrix, budget, optimizer settings), so noise grids
reuse the compilations of the fidelity sweep.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.stats import unitary_group

from . import mitigation as mit
from . import simulator as sim
from . import tomography as tomo
from .circuit import (
    CompiledBlock,
    ConditionalUnitary,
    DynamicCircuit,
    Measure,
    UnitaryBox,
    Condition,
    static_counts,
    unitary_layers,
)
from .compiler import approx_compile, line_connectivity, retarget_block
from .povm import Povm, load_povm, pad_to_power_of_two, sic_povm
from .schemes import SchemeOutput, build_scheme

SCHEMES = ("naimark", "binary", "hybrid")


def derive_seed(base: int, *tags) -> int:
    """Stable per-task seed from a base seed and string/int tags."""
    text = ":".join(str(t) for t in tags)
    return (int(base) * 1000003 + zlib.crc32(text.encode())) % (2**31 - 1)


@dataclass
class CompileOptions:
    seeds: int = 6
    adam_iterations: int = 900
    patience: int = 150
    polish: int = 2
    polish_maxiter: int = 800
    connectivity: str = "line"

    def edges(self, n_qubits: int) -> list[tuple[int, int]]:
        if self.connectivity == "line":
            return line_connectivity(n_qubits)
        if self.connectivity == "all":
            return [(a, b) for a in range(n_qubits) for b in range(a + 1, n_qubits)]
        raise ValueError(f"unknown connectivity {self.connectivity!r}")


@dataclass
class ExperimentConfig:
    n_qubits: int = 2
    schemes: tuple[str, ...] = SCHEMES
    povm: str = "sic"  # "sic" or a path to a POVM JSON file
    budgets: tuple[int, ...] = (9, 11, 13, 15, 17, 19, 21, 23, 25, 27)
    eps_cnot: float = 0.015
    eps_idle: float = 0.05
    eps_idle_grid: tuple[float, ...] = (0.01, 0.03, 0.05)
    eps_cnot_grid: tuple[float, ...] = (0.005, 0.01, 0.015, 0.02, 0.025, 0.03)
    readout: dict = field(default_factory=dict)
    eps_qnd: dict = field(default_factory=dict)
    shots: int | None = None
    seed: int = 2024
    bootstrap_b: int = 0
    mitigation: str = "none"  # none | rem | crem
    include_ideal: bool = True
    compile_options: CompileOptions = field(default_factory=CompileOptions)
    crem_eps: tuple[float, ...] = (0.02, 0.05, 0.1)
    crem_eps_qnd: tuple[float, ...] = (0.0, 0.02, 0.05, 0.1)

    def __post_init__(self):
        self.schemes = tuple(self.schemes)
        self.budgets = tuple(int(b) for b in self.budgets)
        if list(self.budgets) != sorted(self.budgets):
            raise ValueError("budgets must be ascending")
        if self.shots is not None and self.shots <= 0:
            raise ValueError("shots must be positive or null")
        if self.bootstrap_b < 0:
            raise ValueError("bootstrap_b must be non-negative")
        if self.mitigation not in ("none", "rem", "crem"):
            raise ValueError(f"unknown mitigation {self.mitigation!r}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")

    def resolve_povm(self) -> Povm:
        if self.povm == "sic":
            return sic_povm(self.n_qubits)
        return load_povm(self.povm)

    def noise_model(self, eps_cnot=None, eps_idle=None) -> sim.NoiseModel:
        return sim.NoiseModel(
            eps_cnot=self.eps_cnot if eps_cnot is None else eps_cnot,
            eps_idle=self.eps_idle if eps_idle is None else eps_idle,
            readout={int(q): tuple(v) for q, v in self.readout.items()},
            eps_qnd={int(q): float(v) for q, v in self.eps_qnd.items()},
        )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(path.read_text())
    else:
        data = json.loads(path.read_text())
    comp = data.pop("compile_options", {})
    cfg = ExperimentConfig(**data)
    cfg.compile_options = CompileOptions(**comp)
    return cfg


# ---------------------------------------------------------------------------
# Compilation of scheme circuits
# ---------------------------------------------------------------------------

_COMPILE_CACHE: dict = {}


def split_budget(total: int, n_layers: int) -> list[int]:
    """Even split of a path CNOT budget; remainder goes to the last layers."""
    base, extra = divmod(total, n_layers)
    return [base + (1 if i >= n_layers - extra else 0) for i in range(n_layers)]


def _compile_payload(matrix: np.ndarray, budget: int, opts: CompileOptions,
                     seed: int):
    n = int(round(np.log2(matrix.shape[0])))
    key = (matrix.tobytes(), budget, opts.seeds, opts.adam_iterations,
           opts.patience, opts.polish, opts.polish_maxiter, opts.connectivity,
           seed)
    if key not in _COMPILE_CACHE:
        _COMPILE_CACHE[key] = approx_compile(
            matrix, n, budget, opts.edges(n), seeds=opts.seeds, seed=seed,
            adam_iterations=opts.adam_iterations, patience=opts.patience,
            polish=opts.polish, polish_maxiter=opts.polish_maxiter)
    return _COMPILE_CACHE[key]


@dataclass
class CompiledScheme:
    circuit: DynamicCircuit
    layer_budgets: list[int]
    distances: list[float]  # per compiled payload, in op order

    @property
    def max_distance(self) -> float:
        return max(self.distances) if self.distances else 0.0


def compile_scheme_circuit(output: SchemeOutput, total_budget: int,
                           opts: CompileOptions, base_seed: int) -> CompiledScheme:
    """Replace every unitary payload by a fitted CNOT block.

    Every payload in the same layer is compiled at that layer's share of
    the total path budget, so any execution path carries ``total_budget``
    CNOTs.
    """
    circ = output.circuit
    layers = unitary_layers(circ)
    budgets = split_budget(total_budget, len(layers))
    op_budget: dict[int, int] = {}
    for layer_ops, b in zip(layers, budgets):
        for i in layer_ops:
            op_budget[i] = b
    out = DynamicCircuit(circ.n_system, circ.n_aux, circ.n_classical_bits)
    distances = []
    for i, op in enumerate(circ.ops):
        if isinstance(op, UnitaryBox):
            res = _compile_payload(op.matrix, op_budget[i], opts,
                                   derive_seed(base_seed, output.scheme, i))
            distances.append(res.distance)
            out.ops.append(retarget_block(res.block, op.qubits))
        elif isinstance(op, ConditionalUnitary):
            res = _compile_payload(op.matrix, op_budget[i], opts,
                                   derive_seed(base_seed, output.scheme, i))
            distances.append(res.distance)
            block = retarget_block(res.block, op.qubits)
            block.cond = op.cond
            out.ops.append(block)
        else:
            out.ops.append(op)
    return CompiledScheme(out, budgets, distances)


# ---------------------------------------------------------------------------
# Fidelity evaluation of one compiled circuit
# ---------------------------------------------------------------------------

def _ordered_labels(output: SchemeOutput) -> list[str]:
    return sorted(output.outcome_map, key=lambda l: output.outcome_map[l])


def _simulate_distributions(circuit: DynamicCircuit, preps, noise,
                            shots, base_seed: int, tag: str) -> list[dict]:
    dists = []
    for i, rho in enumerate(preps):
        if shots is None:
            dists.append(sim.run_exact(circuit, rho, noise).probabilities)
        else:
            dists.append(sim.sample(circuit, rho, noise, shots,
                                    derive_seed(base_seed, tag, "shots", i)))
    return dists


def _apply_mitigation(cfg: ExperimentConfig, circuit: DynamicCircuit,
                      preps, noise, shots, base_seed: int, tag: str) -> list[dict]:
    """Distributions for tomography, optionally readout-mitigated."""
    if cfg.mitigation == "none" or not cfg.readout:
        return _simulate_distributions(circuit, preps, noise, shots, base_seed, tag)
    confusion = mit.ConfusionMatrix({int(q): tuple(v) for q, v in cfg.readout.items()})
    clbit_qubits = {op.clbit: op.qubit for op in circuit.ops if isinstance(op, Measure)}
    if cfg.mitigation == "rem" or not mit.mid_circuit_measure_indices(circuit):
        dists = _simulate_distributions(circuit, preps, noise, shots, base_seed, tag)
        return [mit.standard_rem(d, confusion, clbit_qubits)[0] for d in dists]
    ensemble = mit.build_calibration_ensemble(circuit)
    mitigated = []
    for i, rho in enumerate(preps):
        variant_dists = []
        for v, var in enumerate(ensemble.variants):
            if shots is None:
                variant_dists.append(sim.run_exact(var, rho, noise).probabilities)
            else:
                variant_dists.append(sim.sample(var, rho, noise, shots,
                                                derive_seed(base_seed, tag, "v", v, i)))
        mitigated.append(mit.crem_mitigate(ensemble, variant_dists, confusion).q)
    return mitigated


def evaluate_fidelity(cfg: ExperimentConfig, output: SchemeOutput,
                      circuit: DynamicCircuit, target: Povm, preps,
                      noise, tag: str) -> dict:
    labels = _ordered_labels(output)
    dists = _apply_mitigation(cfg, circuit, preps, noise, cfg.shots,
                              cfg.seed, tag)
    rec = tomo.detector_tomography(dists, preps, outcome_labels=labels,
                                   target=target)
    row = {"fidelity": rec.fidelity, "std": 0.0,
           "residual": rec.residual, "negative_mass": rec.negative_mass}
    if cfg.shots is not None and cfg.bootstrap_b >= 2:
        metric = lambda ds: tomo.detector_tomography(
            ds, preps, outcome_labels=labels, target=target).fidelity
        mean, std = tomo.bootstrap(dists, cfg.bootstrap_b,
                                   derive_seed(cfg.seed, tag, "boot"), metric)
        row.update(std=std, bootstrap_mean=mean)
    return row


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    kind: str
    rows: list[dict]
    config: ExperimentConfig

    def best_by_scheme(self, key="fidelity") -> dict[str, dict]:
        best: dict[str, dict] = {}
        for row in self.rows:
            s = row["scheme"]
            if s not in best or row[key] > best[s][key]:
                best[s] = row
        return best


def _sweep_unit(args):
    cfg, scheme, budget, target, preps = args
    output = build_scheme(scheme, cfg.resolve_povm())
    compiled = compile_scheme_circuit(output, budget, cfg.compile_options,
                                      cfg.seed)
    counts = static_counts(compiled.circuit)
    noise = cfg.noise_model()
    tag = f"{scheme}:{budget}"
    row = {"scheme": scheme, "budget": budget,
           "distance": compiled.max_distance,
           **evaluate_fidelity(cfg, output, compiled.circuit, target,
                               preps, noise, tag),
           **{f"count_{k}": v for k, v in counts.as_dict().items()}}
    if cfg.include_ideal:
        ideal = evaluate_fidelity(cfg, output, compiled.circuit, target,
                                  preps, None, tag + ":ideal")
        row["ideal_fidelity"] = ideal["fidelity"]
    return row


def run_fidelity_sweep(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Fidelity of each scheme across CNOT budgets under the configured noise."""
    povm = cfg.resolve_povm()
    target = pad_to_power_of_two(povm)
    preps = tomo.pauli_preparation_set(cfg.n_qubits)
    units = [(cfg, scheme, budget, target, preps)
             for scheme in cfg.schemes for budget in cfg.budgets]
    rows = _pmap(_sweep_unit, units, jobs)
    return SweepResult("fidelity", rows, cfg)


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _grid_unit(args):
    cfg, scheme, budget, target, preps = args
    output = build_scheme(scheme, cfg.resolve_povm())
    compiled = compile_scheme_circuit(output, budget, cfg.compile_options,
                                      cfg.seed)
    cells = []
    for eps_idle in cfg.eps_idle_grid:
        for eps_cnot in cfg.eps_cnot_grid:
            noise = cfg.noise_model(eps_cnot=eps_cnot, eps_idle=eps_idle)
            tag = f"grid:{scheme}:{budget}:{eps_idle}:{eps_cnot}"
            row = evaluate_fidelity(cfg, output, compiled.circuit, target,
                                    preps, noise, tag)
            cells.append((eps_idle, eps_cnot, row["fidelity"], row["std"]))
    return scheme, budget, compiled.max_distance, cells


def run_noise_grid(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Best-over-budgets fidelity per scheme on an idle x CNOT error grid.

    Each (scheme, budget) pair is compiled once and evaluated on every grid
    cell; the per-cell best budget is then selected.
    """
    povm = cfg.resolve_povm()
    target = pad_to_power_of_two(povm)
    preps = tomo.pauli_preparation_set(cfg.n_qubits)
    units = [(cfg, scheme, budget, target, preps)
             for scheme in cfg.schemes for budget in cfg.budgets]
    results = _pmap(_grid_unit, units, jobs)
    best: dict[tuple, dict] = {}
    for scheme, budget, distance, cells in results:
        for eps_idle, eps_cnot, fidelity, std in cells:
            key = (eps_idle, eps_cnot, scheme)
            if key not in best or fidelity > best[key]["fidelity"]:
                best[key] = {"eps_idle": eps_idle, "eps_cnot": eps_cnot,
                             "scheme": scheme, "best_budget": budget,
                             "fidelity": fidelity, "std": std,
                             "distance": distance}
    rows = [best[(ei, ec, s)]
            for ei in cfg.eps_idle_grid for ec in cfg.eps_cnot_grid
            for s in cfg.schemes]
    return SweepResult("noise-grid", rows, cfg)


def fig7_model_circuit(seed: int) -> DynamicCircuit:
    """Two-qubit circuit with one mid-circuit measurement and Haar unitaries."""
    u = unitary_group.rvs(4, random_state=seed)
    u0 = unitary_group.rvs(4, random_state=seed + 1)
    u1 = unitary_group.rvs(4, random_state=seed + 2)
    circ = DynamicCircuit(n_system=2, n_aux=0, n_classical_bits=2)
    circ.ops += [
        UnitaryBox((0, 1), u),
        Measure(0, 0),
        ConditionalUnitary((0, 1), u0, Condition((0,), 0)),
        ConditionalUnitary((0, 1), u1, Condition((0,), 1)),
        Measure(1, 1),
    ]
    return circ


def run_crem_study(cfg: ExperimentConfig) -> SweepResult:
    """Hellinger distance with and without CREM over (eps, eps_qnd) grids."""
    circ = fig7_model_circuit(derive_seed(cfg.seed, "crem-model"))
    ensemble = mit.build_calibration_ensemble(circ)
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = 1.0
    ideal = sim.run_exact(circ, rho).probabilities
    rows = []
    for eps_qnd in cfg.crem_eps_qnd:
        for eps in cfg.crem_eps:
            noise = sim.NoiseModel(readout={0: (eps, eps)}, eps_qnd={0: eps_qnd})
            dists = []
            for v, var in enumerate(ensemble.variants):
                if cfg.shots is None:
                    dists.append(sim.run_exact(var, rho, noise).probabilities)
                else:
                    dists.append(sim.sample(var, rho, noise, cfg.shots,
                                            derive_seed(cfg.seed, "crem", eps,
                                                        eps_qnd, v)))
            confusion = mit.ConfusionMatrix({0: (eps, eps)})
            res = mit.crem_mitigate(ensemble, dists, confusion)
            rows.append({
                "eps": eps, "eps_qnd": eps_qnd,
                "hellinger_mitigated": mit.hellinger(res.q, ideal),
                "hellinger_unmitigated": mit.hellinger(dists[0], ideal),
                "clipped_mass": res.clipped_mass,
            })
    return SweepResult("crem-study", rows, cfg)


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------

_FIG_COLUMNS = {
    "fidelity": ["scheme", "budget", "fidelity", "std", "distance"],
    "noise-grid": ["eps_idle", "eps_cnot", "scheme", "best_budget",
                   "fidelity", "std", "distance"],
    "crem-study": ["eps", "eps_qnd", "hellinger_mitigated",
                   "hellinger_unmitigated"],
}

_FIG_NAMES = {"fidelity": "fig3", "noise-grid": "fig9", "crem-study": "fig8"}


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(result: SweepResult, path, columns: list[str] | None = None) -> None:
    columns = columns or _FIG_COLUMNS[result.kind]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in result.rows:
            writer.writerow([_format_cell(row.get(c, "")) for c in columns])


def write_outputs(result: SweepResult, out_dir, figures: bool = True) -> dict:
    """CSV + summary JSON (+ rendered figure) for a sweep result."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = _FIG_NAMES[result.kind]
    paths = {"csv": out_dir / f"{name}.csv", "summary": out_dir / "summary.json"}
    write_csv(result, paths["csv"])
    if result.kind == "fidelity" and result.config.include_ideal:
        ideal_rows = SweepResult("fidelity", [
            {**row, "fidelity": row.get("ideal_fidelity", ""), "std": 0.0}
            for row in result.rows], result.config)
        paths["ideal_csv"] = out_dir / f"{name}_ideal.csv"
        write_csv(ideal_rows, paths["ideal_csv"])
    summary = {
        "kind": result.kind,
        "seed": result.config.seed,
        "rows": [{k: v for k, v in row.items()} for row in result.rows],
    }
    if result.kind in ("fidelity", "noise-grid"):
        summary["best_by_scheme"] = {
            s: {k: v for k, v in row.items()}
            for s, row in result.best_by_scheme().items()
        }
    paths["summary"].write_text(json.dumps(summary, indent=1, default=float))
    if figures:
        from . import plotting

        paths["figure"] = out_dir / f"{name}.png"
        plotting.render(result, paths["figure"])
    return paths
