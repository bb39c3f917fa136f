"""Benchmark command line: Riesz maps, conditioning, decoupling, complexity, Hodge solves.

Every command writes plot-ready CSV (header row, comma separated, UTF-8).
Each row carries the hash of the run configuration and the residual
convention of the Krylov drivers.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from derham.assembly import assemble_operator, number_dofs
from derham.costs import CostLedger
from derham.hodge import assemble_hodge, classify_eigenvalues, solve_hodge
from derham.linalg import RESIDUAL_CONVENTION, pcg
from derham.mesh import build_fichera, build_freudenthal, build_unit_triangle_mesh, refine_bey, single_cell_mesh
from derham.reference import SpaceTag, decoupling_constant, reference_element, reference_matrices
from derham.schwarz import DecompositionSpec, build_hybrid

__all__ = ["RunConfig", "main", "run", "COMMANDS", "parse_range", "fit_exponent"]

RECOMMENDED = {0: "pafw0", 1: "ph-typeI", 2: "pafw1"}


def parse_range(text: str) -> list[int]:
    """'3:7' -> [3..7] (inclusive), '1,3' -> [1, 3], '4' -> [4]."""
    out: list[int] = []
    for part in str(text).split(","):
        if ":" in part:
            a, b = part.split(":")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def parse_floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v]


def parse_split(text: str) -> list[bool]:
    table = {"on": [True], "off": [False], "both": [True, False]}
    if text not in table:
        raise argparse.ArgumentTypeError("split must be on, off or both")
    return table[text]


def fit_exponent(p, values) -> float:
    """Least-squares slope of log(values) against log(p)."""
    return float(np.polyfit(np.log(np.asarray(p, float)), np.log(np.asarray(values, float)), 1)[0])


@dataclass
class RunConfig:
    """Validated experiment configuration (all fields enter the row hash)."""

    command: str
    k: list = field(default_factory=lambda: [0])
    kind: str = "first"
    p: list = field(default_factory=lambda: [3])
    mesh: str = "freudenthal"
    n: int = 3
    levels: list = field(default_factory=lambda: [0])
    alpha: list = field(default_factory=lambda: [1.0])
    beta: float = 1.0
    decomp: str | None = None
    split: list = field(default_factory=lambda: [True])
    gamma: list = field(default_factory=lambda: [1.0])
    solver: str = "schwarz"
    dim: int = 3
    rtol: float = 1e-8
    maxit: int = 1000
    seed: int = 0
    out: str | None = None

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.kind not in ("first", "second"):
            raise ValueError("kind must be first or second")
        if self.beta < 0 or any(a < 0 for a in self.alpha):
            raise ValueError("coefficients must be nonnegative")
        if any(g <= 0 for g in self.gamma):
            raise ValueError("gamma must be positive")
        if not 0 < self.rtol < 1:
            raise ValueError("rtol must lie in (0, 1)")
        if self.mesh not in ("freudenthal", "fichera"):
            raise ValueError("mesh must be freudenthal or fichera")
        if self.mesh == "fichera" and self.n % 2:
            raise ValueError("the Fichera mesh needs an even n")
        if self.command == "riesz":
            for k in self.k:
                if k not in RECOMMENDED:
                    raise ValueError("riesz solves need k in 0:2")
                DecompositionSpec(self.decomp or RECOMMENDED[k]).validate(k, 3)
        if self.command in ("hodge", "eigcheck"):
            if any(not 1 <= k <= self.dim for k in self.k):
                raise ValueError("Hodge problems need 1 <= k <= d")
        if min(self.p, default=1) < 1:
            raise ValueError("degrees must be positive")

    def fingerprint(self) -> str:
        data = dataclasses.asdict(self)
        data.pop("out")
        blob = json.dumps(data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return "" if v is None else str(v)


def _mesh(cfg: RunConfig, level: int = 0):
    m = build_freudenthal(cfg.n) if cfg.mesh == "freudenthal" else build_fichera(cfg.n)
    for _ in range(level):
        m = refine_bey(m)
    return m


# ----------------------------------------------------------------- commands


def cmd_riesz(cfg: RunConfig):
    for level in cfg.levels:
        mesh = _mesh(cfg, level)
        for k in cfg.k:
            for p in cfg.p:
                space = number_dofs(mesh, SpaceTag(k, 3, cfg.kind, p))
                b = np.random.default_rng([cfg.seed, level, k, p]).standard_normal(space.n)
                for alpha in cfg.alpha:
                    for split in cfg.split:
                        ledger = CostLedger()
                        spec = DecompositionSpec(cfg.decomp or RECOMMENDED[k], split)
                        op = assemble_operator(space, alpha, cfg.beta, ledger)
                        hs, dec = build_hybrid(space, op, spec, seed=cfg.seed)
                        setup = ledger.snapshot()
                        _, rep = pcg(op.matvec, hs, b, cfg.rtol, cfg.maxit)
                        solve = ledger.since(setup)
                        yield {
                            "k": k, "kind": cfg.kind, "level": level, "degree": p,
                            "alpha": alpha, "beta": cfg.beta, "decomposition": spec.name,
                            "split": split, "dofs": space.n,
                            "max_patch_dim": max((len(s.indices) for s in dec.patches), default=0),
                            "iterations": rep.iterations, "converged": rep.converged,
                            "residual": rep.residual, "weights": hs.weights,
                            "nnz_patches": ledger.nnz["patch_factors"],
                            "flops_setup": sum(setup["flops"].values()),
                            "flops_solve": sum(solve["flops"].values()),
                        }


def _scaled_condition(block: np.ndarray) -> float:
    dg = np.sqrt(np.diag(block))
    s = block / np.outer(dg, dg)
    ev = np.linalg.eigvalsh(s)
    return float(ev[-1] / ev[0])


def cmd_conditioning(cfg: RunConfig):
    for k in cfg.k:
        for p in cfg.p:
            deg = p - 1 if k == cfg.dim else p
            el = reference_element(SpaceTag(k, cfg.dim, cfg.kind, deg))
            mats = reference_matrices(el)
            idx = el.interior
            blocks = [("mass", mats["M"])]
            if k < cfg.dim:
                # stiffness acts only on type-I interior functions
                blocks.append(("stiffness", mats["K"]))
            for name, mat in blocks:
                sel = idx if name == "mass" else np.intersect1d(idx, el.type1)
                empty = len(sel) == 0
                yield {"k": k, "kind": cfg.kind, "degree": p, "block": name,
                       "dofs": len(sel), "empty": empty,
                       "kappa": None if empty else _scaled_condition(mat[np.ix_(sel, sel)])}


def cmd_decoupling(cfg: RunConfig):
    for k in cfg.k:
        vals = []
        for p in cfg.p:
            w = decoupling_constant(SpaceTag(k, cfg.dim, cfg.kind, p))
            vals.append(w)
            yield {"k": k, "kind": cfg.kind, "degree": p, "omega": w}
        if len(vals) > 1:
            yield {"k": k, "kind": cfg.kind, "degree": f"{cfg.p[0]}:{cfg.p[-1]}",
                   "slope": fit_exponent(cfg.p, vals)}


def cmd_complexity(cfg: RunConfig):
    mesh = _mesh(cfg)
    for k in cfg.k:
        for split in cfg.split:
            nnz, flops = [], []
            for p in cfg.p:
                ledger = CostLedger()
                space = number_dofs(mesh, SpaceTag(k, 3, cfg.kind, p))
                op = assemble_operator(space, 1.0, 1.0, ledger)
                spec = DecompositionSpec(cfg.decomp or RECOMMENDED[k], split)
                hs, dec = build_hybrid(space, op, spec, seed=cfg.seed)
                setup = ledger.snapshot()
                r = np.random.default_rng(cfg.seed).standard_normal(space.n)
                hs(r)
                op.matvec(r)
                it = sum(ledger.since(setup)["flops"].values())
                nnz.append(ledger.nnz["patch_factors"])
                flops.append(it)
                yield {"k": k, "kind": cfg.kind, "degree": p, "decomposition": spec.name,
                       "split": split, "dofs": space.n, "nnz_patches": nnz[-1],
                       "flops_setup": sum(setup["flops"].values()), "flops_iteration": it,
                       "peak_bytes": ledger.peak_bytes}
            if len(cfg.p) > 1:
                yield {"k": k, "kind": cfg.kind, "degree": f"{cfg.p[0]}:{cfg.p[-1]}",
                       "decomposition": spec.name, "split": split,
                       "nnz_exponent": fit_exponent(cfg.p, nnz),
                       "flops_exponent": fit_exponent(cfg.p, flops)}


def cmd_hodge(cfg: RunConfig):
    mesh = build_fichera(cfg.n) if cfg.mesh == "fichera" else _mesh(cfg)
    for k in cfg.k:
        for p in cfg.p:
            for gamma in cfg.gamma:
                for split in cfg.split:
                    system, prec = assemble_hodge(k, mesh, p, gamma, cfg.solver, split, cfg.seed)
                    _, _, rep = solve_hodge(system, prec, cfg.rtol, cfg.maxit)
                    yield {"k": k, "kind": "first", "degree": p, "gamma": gamma,
                           "split": split, "solver": cfg.solver, "dofs": sum(system.sizes),
                           "iterations": rep.iterations, "converged": rep.converged,
                           "residual": rep.residual}


def _eig_mesh(d: int):
    if d == 2:
        return build_unit_triangle_mesh(2)
    return refine_bey(single_cell_mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])))


def cmd_eigcheck(cfg: RunConfig):
    mesh = _eig_mesh(cfg.dim)
    for k in cfg.k:
        for p in cfg.p:
            for gamma in cfg.gamma:
                rep = classify_eigenvalues(k, mesh, p, gamma)
                pos = rep.computed[rep.computed > 0]
                yield {"k": k, "dim": cfg.dim, "degree": p, "gamma": gamma,
                       "passed": rep.passed, "max_rel_error": rep.max_rel_error,
                       "n_minus_one": rep.n_minus_one, "nu_min": rep.nu_min,
                       "harmonic_dim": rep.harmonic_dim,
                       "min_positive": float(pos.min()) if len(pos) else None}


COMMANDS = {
    "riesz": cmd_riesz,
    "conditioning": cmd_conditioning,
    "decoupling": cmd_decoupling,
    "complexity": cmd_complexity,
    "hodge": cmd_hodge,
    "eigcheck": cmd_eigcheck,
}

COLUMNS = {
    "riesz": ["k", "kind", "level", "degree", "alpha", "beta", "decomposition", "split", "dofs",
              "max_patch_dim", "iterations", "converged", "residual", "weights", "nnz_patches",
              "flops_setup", "flops_solve"],
    "conditioning": ["k", "kind", "degree", "block", "dofs", "empty", "kappa"],
    "decoupling": ["k", "kind", "degree", "omega", "slope"],
    "complexity": ["k", "kind", "degree", "decomposition", "split", "dofs", "nnz_patches",
                   "flops_setup", "flops_iteration", "peak_bytes", "nnz_exponent",
                   "flops_exponent"],
    "hodge": ["k", "kind", "degree", "gamma", "split", "solver", "dofs", "iterations",
              "converged", "residual"],
    "eigcheck": ["k", "dim", "degree", "gamma", "passed", "max_rel_error", "n_minus_one",
                 "nu_min", "harmonic_dim", "min_positive"],
}


def run(cfg: RunConfig, stream=None) -> list[dict]:
    """Execute ``cfg`` and write CSV to ``cfg.out`` (or ``stream``)."""
    cfg.validate()
    header = ["command"] + COLUMNS[cfg.command] + ["seed", "residual_convention", "config_hash"]
    rows = []
    extra = {"command": cfg.command, "seed": cfg.seed,
             "residual_convention": RESIDUAL_CONVENTION, "config_hash": cfg.fingerprint()}
    handle = open(cfg.out, "w", newline="", encoding="utf-8") if cfg.out else (stream or sys.stdout)
    try:
        writer = csv.DictWriter(handle, fieldnames=header, extrasaction="ignore")
        writer.writeheader()
        for row in COMMANDS[cfg.command](cfg):
            row = {**extra, **row}
            rows.append(row)
            writer.writerow({key: _fmt(row.get(key)) for key in header})
            handle.flush()
    finally:
        if cfg.out:
            handle.close()
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="derham-bench", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--k", default={"riesz": "0", "hodge": "1:3", "eigcheck": "1:2"}.get(name, "0:2"))
        sp.add_argument("--kind", default="first", choices=["first", "second"])
        sp.add_argument("--p", default={"decoupling": "4:10", "complexity": "4:8",
                                        "conditioning": "1:8", "hodge": "1:4",
                                        "eigcheck": "1:2"}.get(name, "3:7"))
        sp.add_argument("--mesh", default="fichera" if name == "hodge" else "freudenthal")
        sp.add_argument("--n", type=int, default=4 if name == "hodge" else 3)
        sp.add_argument("--levels", default="0")
        sp.add_argument("--alpha", default="1")
        sp.add_argument("--beta", type=float, default=1.0)
        sp.add_argument("--decomp", default=None, choices=[None, "pafw0", "pafw1", "ph", "ph-typeI"])
        sp.add_argument("--split", default="on", type=parse_split)
        sp.add_argument("--gamma", default="1")
        sp.add_argument("--solver", default="schwarz", choices=["schwarz", "exact"])
        sp.add_argument("--dim", type=int, default=3)
        sp.add_argument("--rtol", type=float, default=1e-8)
        sp.add_argument("--maxit", type=int, default=1000)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None)
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=ns.command, k=parse_range(ns.k), kind=ns.kind, p=parse_range(ns.p),
        mesh=ns.mesh, n=ns.n, levels=parse_range(ns.levels), alpha=parse_floats(ns.alpha),
        beta=ns.beta, decomp=ns.decomp, split=ns.split, gamma=parse_floats(ns.gamma),
        solver=ns.solver, dim=ns.dim, rtol=ns.rtol, maxit=ns.maxit, seed=ns.seed, out=ns.out,
    )


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    cfg = config_from_args(ns)
    try:
        cfg.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        with threadpool_limits(limits=max(ns.threads, 1)):
            run(cfg)
    except BrokenPipeError:
        # downstream reader (e.g. head) closed early
        sys.stdout = open(os.devnull, "w")
        return 0
    print(f"# {cfg.command} done in {time.perf_counter() - start:.1f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
