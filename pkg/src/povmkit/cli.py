"""Command-line interface.

Every subcommand is a thin shell over the library: identical inputs give
identical results through either path. Randomized commands take a --seed
and echo it in their output metadata. With -v, failures additionally emit
a machine-readable JSON envelope on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as exp
from . import mitigation as mit
from . import simulator as sim
from . import tomography as tomo
from .circuit import circuit_from_json, circuit_to_json, static_counts, validate_circuit
from .compiler import resource_estimate
from .povm import (
    Povm,
    load_povm,
    matrix_from_json,
    matrix_to_json,
    povm_from_json,
    povm_to_json,
    sic_povm,
    validate,
)
from .schemes import SchemeOutput, build_scheme


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, default=float))


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _load_circuit_doc(path) -> tuple:
    """Accept either a bare circuit document or a scheme/compile wrapper."""
    data = _load_json(path)
    if "circuit" in data:
        circ = circuit_from_json(data["circuit"])
        outcome_map = data.get("outcome_map")
        scheme = data.get("scheme")
    else:
        circ = circuit_from_json(data)
        outcome_map = None
        scheme = None
    return circ, outcome_map, scheme


def _load_state(path) -> np.ndarray:
    data = _load_json(path)
    if "ket" in data:
        ket = np.array([complex(re, im) for re, im in data["ket"]])
        ket = ket / np.linalg.norm(ket)
        return np.outer(ket, ket.conj())
    if "matrix" in data:
        return matrix_from_json(data["matrix"])
    raise ValueError("state file needs a 'ket' or 'matrix' field")


def _load_noise(path) -> sim.NoiseModel:
    data = _load_json(path)
    return sim.NoiseModel(
        eps_cnot=float(data.get("eps_cnot", 0.0)),
        eps_idle=float(data.get("eps_idle", 0.0)),
        readout={int(q): tuple(v) for q, v in data.get("readout", {}).items()},
        eps_qnd={int(q): float(v) for q, v in data.get("eps_qnd", {}).items()},
    )


def _load_calibration(path) -> tuple[mit.ConfusionMatrix, dict[int, float]]:
    data = _load_json(path)
    readout = {int(q): tuple(v) for q, v in data.get("readout", {}).items()}
    qnd = {int(q): float(v) for q, v in data.get("eps_qnd", {}).items()}
    return mit.ConfusionMatrix(readout), qnd


def _read_counts_csv(path) -> dict[int, dict[str, float]]:
    """CSV rows state_index,outcome_bitstring,count -> per-state distributions."""
    per_state: dict[int, dict[str, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["state_index", "outcome_bitstring", "count"]:
            raise ValueError(
                "counts CSV must start with header state_index,outcome_bitstring,count"
            )
        for row in reader:
            if not row:
                continue
            idx = int(row[0])
            per_state.setdefault(idx, {})[row[1]] = float(row[2])
    return per_state


def _resolve_preparations(spec: str) -> list[np.ndarray]:
    if spec.startswith("pauli:"):
        return tomo.pauli_preparation_set(int(spec.split(":", 1)[1]))
    data = _load_json(spec)
    return [matrix_from_json(m) for m in data["states"]]


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_povm(args) -> int:
    if args.kind != "sic":
        raise ValueError(f"unknown POVM kind {args.kind!r}")
    povm = sic_povm(args.qubits)
    report = validate(povm)
    if not report.complete:
        raise ValueError("constructed POVM failed validation")
    _write_json(args.out, povm_to_json(povm))
    print(f"wrote {args.out}: d={povm.d}, M={povm.n_outcomes}, "
          f"completeness residual {report.completeness_residual:.2e}")
    return 0


def _scheme_doc(output: SchemeOutput) -> dict:
    return {
        "scheme": output.scheme,
        "circuit": circuit_to_json(output.circuit),
        "outcome_map": output.outcome_map,
        "static_counts": static_counts(output.circuit).as_dict(),
    }


def cmd_build(args) -> int:
    povm = load_povm(args.povm)
    output = build_scheme(args.scheme, povm)
    _write_json(args.out, _scheme_doc(output))
    counts = static_counts(output.circuit)
    print(f"wrote {args.out}: {args.scheme} circuit, "
          f"{counts.mid_circuit_measurements} mid-circuit measurements, "
          f"{counts.feed_forward_cases} feed-forward cases")
    return 0


def cmd_compile(args) -> int:
    circ, outcome_map, scheme = _load_circuit_doc(args.circuit)
    opts = exp.CompileOptions(seeds=args.seeds, adam_iterations=args.adam_iterations,
                              polish_maxiter=args.polish_maxiter)
    output = SchemeOutput(scheme or "custom", circ, outcome_map or {})
    compiled = exp.compile_scheme_circuit(output, args.budget, opts, args.seed)
    doc = {
        "scheme": scheme,
        "budget": args.budget,
        "seed": args.seed,
        "layer_budgets": compiled.layer_budgets,
        "distances": compiled.distances,
        "max_distance": compiled.max_distance,
        "circuit": circuit_to_json(compiled.circuit),
        "outcome_map": outcome_map,
        "static_counts": static_counts(compiled.circuit).as_dict(),
    }
    _write_json(args.out, doc)
    print(f"wrote {args.out}: depth {args.budget}, "
          f"max approximation distance {compiled.max_distance:.4g}")
    return 0


def cmd_simulate(args) -> int:
    circ, outcome_map, _ = _load_circuit_doc(args.circuit)
    rho = _load_state(args.state)
    noise = _load_noise(args.noise) if args.noise else None
    meta = {"circuit": args.circuit, "state": args.state,
            "noise": args.noise, "shots": args.shots, "seed": args.seed}
    if args.shots:
        counts = sim.sample(circ, rho, noise, args.shots, args.seed)
        doc = {"counts": counts, "metadata": meta}
    else:
        trace = sim.run_exact(circ, rho, noise)
        doc = {"probabilities": trace.probabilities,
               "total_probability": trace.total_probability, "metadata": meta}
    if outcome_map:
        doc["outcome_map"] = outcome_map
    if args.out:
        _write_json(args.out, doc)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(doc, indent=1, default=float))
    return 0


def cmd_tomography(args) -> int:
    per_state = _read_counts_csv(args.counts)
    indices = sorted(per_state)
    if args.mode == "detector":
        preps = _resolve_preparations(args.preparations)
        if len(preps) != len(indices):
            raise ValueError(f"{len(indices)} states in counts but "
                             f"{len(preps)} preparations")
        target = load_povm(args.target) if args.target else None
        dists = [per_state[i] for i in indices]
        labels = sorted({l for d in dists for l in d})
        rec = tomo.detector_tomography(dists, preps, outcome_labels=labels,
                                       target=target)
        doc = {
            "fidelity": rec.fidelity,
            "residual": rec.residual,
            "negative_mass": rec.negative_mass,
            "outcome_labels": labels,
            "elements": [matrix_to_json(e) for e in rec.estimate.elements],
            "seed": args.seed,
        }
        if target is not None and args.bootstrap >= 2:
            metric = lambda ds: tomo.detector_tomography(
                ds, preps, outcome_labels=labels, target=target).fidelity
            mean, std = tomo.bootstrap(dists, args.bootstrap, args.seed, metric)
            doc.update(bootstrap_mean=mean, bootstrap_std=std,
                       bootstrap_b=args.bootstrap)
    else:
        ideal = load_povm(args.povm)
        results = {}
        for i in indices:
            labels = sorted(per_state[i])
            rec = tomo.state_tomography(per_state[i], ideal, outcome_labels=labels)
            results[str(i)] = {"matrix": matrix_to_json(rec.estimate),
                               "residual": rec.residual,
                               "negative_mass": rec.negative_mass}
        doc = {"states": results, "seed": args.seed}
    _write_json(args.out, doc)
    print(f"wrote {args.out}")
    return 0


def cmd_crem(args) -> int:
    circ, _, _ = _load_circuit_doc(args.circuit)
    confusion, qnd = _load_calibration(args.calibration)
    ensemble = mit.build_calibration_ensemble(circ)
    if args.state:
        rho = _load_state(args.state)
    else:
        d = 2**circ.n_system
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
    noise = sim.NoiseModel(readout=dict(confusion.rates), eps_qnd=qnd)
    dists = []
    for v, var in enumerate(ensemble.variants):
        if args.shots:
            dists.append(sim.sample(var, rho, noise, args.shots, args.seed + v))
        else:
            dists.append(sim.run_exact(var, rho, noise).probabilities)
    res = mit.crem_mitigate(ensemble, dists, confusion)
    ideal = sim.run_exact(circ, rho).probabilities
    noisy = {k: v / max(sum(dists[0].values()), 1e-300) for k, v in dists[0].items()}
    doc = {
        "q": res.q,
        "q_variants": res.q_variants,
        "clipped_mass": res.clipped_mass,
        "hellinger_mitigated": mit.hellinger(res.q, ideal),
        "hellinger_unmitigated": mit.hellinger(noisy, ideal),
        "n_mid": ensemble.n_mid,
        "sampling_overhead": 2**ensemble.n_mid,
        "seed": args.seed,
    }
    _write_json(args.out, doc)
    print(f"wrote {args.out}: mitigated Hellinger distance "
          f"{doc['hellinger_mitigated']:.4g} "
          f"(unmitigated {doc['hellinger_unmitigated']:.4g})")
    return 0


def cmd_sweep(args) -> int:
    cfg = exp.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    runners = {"fidelity": exp.run_fidelity_sweep,
               "noise-grid": exp.run_noise_grid,
               "crem-study": lambda c, jobs=1: exp.run_crem_study(c)}
    result = runners[args.kind](cfg, jobs=args.jobs)
    paths = exp.write_outputs(result, args.out, figures=not args.no_figures)
    for name, p in paths.items():
        print(f"wrote {p}")
    return 0


def cmd_resources(args) -> int:
    est = resource_estimate(args.scheme, args.n, args.M)
    print(json.dumps(est.as_dict(), indent=1))
    return 0


def cmd_validate(args) -> int:
    path = Path(args.path)
    data = _load_json(path)
    if "elements" in data and "d" in data:
        povm = povm_from_json(data)
        report = validate(povm)
        print(json.dumps({
            "type": "povm", "complete": report.complete,
            "completeness_residual": report.completeness_residual,
            "ranks": report.ranks,
            "linearly_independent": report.linearly_independent,
        }, indent=1))
        return 0
    circ, _, _ = _load_circuit_doc(path)
    report = validate_circuit(circ)
    print(json.dumps({"type": "circuit", "valid": report.valid,
                      "violations": report.violations}, indent=1))
    return 0 if report.valid else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="povmkit",
        description="Dynamic-circuit POVM construction, simulation and analysis")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("povm", help="construct and write a POVM")
    p.add_argument("kind", choices=["sic"])
    p.add_argument("--qubits", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_povm)

    p = sub.add_parser("build", help="build a measurement circuit from a POVM")
    p.add_argument("--scheme", choices=["naimark", "binary", "hybrid"], required=True)
    p.add_argument("--povm", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("compile", help="approximately compile circuit unitaries")
    p.add_argument("--circuit", required=True)
    p.add_argument("--budget", type=int, required=True,
                   help="total CNOT depth along one execution path")
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--adam-iterations", type=int, default=1200)
    p.add_argument("--polish-maxiter", type=int, default=1500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("simulate", help="run a dynamic circuit exactly or sampled")
    p.add_argument("--circuit", required=True)
    p.add_argument("--state", required=True)
    p.add_argument("--noise")
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tomography", help="detector or state reconstruction")
    p.add_argument("mode", choices=["detector", "state"])
    p.add_argument("--counts", required=True,
                   help="CSV with header state_index,outcome_bitstring,count")
    p.add_argument("--preparations", default="pauli:2",
                   help="'pauli:N' or a JSON file with prepared states")
    p.add_argument("--target", help="ideal POVM JSON for fidelity (detector mode)")
    p.add_argument("--povm", help="ideal POVM JSON used as detector (state mode)")
    p.add_argument("--bootstrap", type=int, default=0)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("crem", help="conditional readout error mitigation report")
    p.add_argument("--circuit", required=True)
    p.add_argument("--calibration", required=True,
                   help="JSON with per-qubit readout and eps_qnd rates")
    p.add_argument("--state")
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crem)

    p = sub.add_parser("sweep", help="run a configured experiment sweep")
    p.add_argument("kind", choices=["fidelity", "noise-grid", "crem-study"])
    p.add_argument("--config", required=True, help="TOML or JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("resources", help="closed-form resource bounds")
    p.add_argument("--scheme", choices=["naimark", "binary", "hybrid"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.set_defaults(func=cmd_resources)

    p = sub.add_parser("validate", help="validate a POVM or circuit file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        if args.verbose >= 1:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
