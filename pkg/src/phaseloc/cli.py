"""Command-line entry point: ``phaseloc <subcommand> [options]``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness as H
from .channel import Observation, observe
from .pipeline import PipelineConfig
from .scenario import SeededRng, default_scenario, grid_scenario, load_config, scenario_from_config
from .selection import polo2_scores, select_polo2, select_strategy1, select_strategy2, strategy2_scores


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _point(text: str) -> np.ndarray:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected x,y")
    return np.array(vals)


class Context:
    """Scenario and settings resolved from --config, --seed and section defaults."""

    def __init__(self, args):
        self.cfg = load_config(args.config) if args.config else {}
        exp = self.cfg.get("experiment", {})
        self.seed = args.seed if args.seed is not None else int(self.cfg.get("seed", exp.get("seed", 1)))
        if self.cfg:
            self.sc = scenario_from_config(self.cfg, self.seed)
        else:
            self.sc = default_scenario(self.seed)
        self.selection = dict(self.cfg.get("selection", {}))
        if "threshold_m" in self.selection:
            self.selection["threshold"] = self.selection.pop("threshold_m")
        pipe = self.cfg.get("pipeline", {})
        self.pipeline = PipelineConfig(**{k: pipe[k] for k in ("admission_margin", "closed_form_tol",
                                                                "high_error_tol_deg", "fallback_k") if k in pipe})
        self.exp = exp
        self.out = Path(args.out)
        self.threads = max(1, int(args.threads))

    def opt(self, value, key, default):
        """CLI value if given, else the [experiment] entry, else the default."""
        if value is not None:
            return value
        return self.exp.get(key, default)

    def method(self, name: str, **kw) -> H.Method:
        return H.make_method(self.sc, name, self.selection, self.pipeline, **kw)


def cmd_simulate(args, ctx: Context) -> int:
    sc = ctx.sc
    if args.power_dbm is not None:
        sc = sc.with_power_dbm(args.power_dbm)
    if getattr(args, "obs", None):
        obs = read_observation(args.obs)
    else:
        ue = args.ue if args.ue is not None else _point(ctx.opt(None, "ue", "1,2"))
        obs = observe(ue, sc, None if args.noiseless else SeededRng(ctx.seed, (4, 0)))
        if args.command == "simulate":
            ctx.out.mkdir(parents=True, exist_ok=True)
            obs.to_csv(ctx.out / "observation.csv")
    method = ctx.method(args.method)
    rep = method.run(obs, sc)
    row = rep.as_row()
    if obs.ue_truth is not None:
        row["error_m"] = float(np.hypot(*(rep.estimate - obs.ue_truth)))
    H.write_csv([row], ctx.out / f"{args.command}_{method.name}.csv")
    for k, v in row.items():
        print(f"{k}={v}")
    return 0


def read_observation(path) -> Observation:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0])
    return Observation.from_samples(data[order, 1] + 1j * data[order, 2])


def cmd_rmse_map(args, ctx: Context) -> int:
    method = ctx.method(args.method)
    m = H.rmse_map(ctx.sc, method, ctx.opt(args.res, "map_res", 0.25), ctx.opt(args.trials, "map_trials", 20),
                   ctx.seed, ctx.threads, noiseless=args.noiseless)
    path = H.write_map_csv(m, ctx.out / f"rmse_map_{method.name}.csv")
    print(f"method={method.name} subset={'-'.join(map(str, method.subset))} "
          f"coverage_lambda={m.coverage(ctx.sc.wavelength):.6f} csv={path}")
    return 0


def cmd_peb_map(args, ctx: Context) -> int:
    if args.subset:
        subset = _ints(args.subset)
    elif args.variant == "triplet":
        subset = ctx.method(args.method or "polo1-s2").subset
    elif args.variant in ("two_pairs", "quad_ref"):
        subset = ctx.method("polo2").subset
    else:
        subset = ()
    m = H.peb_map(ctx.sc, args.variant, subset, ctx.opt(args.res, "map_res", 0.25))
    path = H.write_map_csv(m, ctx.out / f"peb_map_{args.variant}.csv")
    print(f"variant={args.variant} subset={'-'.join(map(str, subset))} "
          f"coverage_lambda={m.coverage(ctx.sc.wavelength):.6f} csv={path}")
    return 0


def cmd_rmse_vs_power(args, ctx: Context) -> int:
    names = (args.methods or ",".join(ctx.exp.get("methods", ["egs", "polo1-s2", "polo2"]))).split(",")
    powers = _floats(args.powers) if args.powers else ctx.exp.get("powers_dbm", [-10, -5, 0, 5, 10])
    ue = args.ue if args.ue is not None else _point(ctx.exp.get("ue", "1,2"))
    methods = [ctx.method(n.strip()) for n in names]
    rows = H.rmse_vs_power(ctx.sc, methods, powers, ue, ctx.opt(args.trials, "power_trials", 200),
                           ctx.seed, ctx.threads)
    path = H.write_csv(rows, ctx.out / "rmse_vs_power.csv", ["method", "power_dbm", "rmse_m", "peb_m"])
    for r in rows:
        print(f"{r['method']:>12} {r['power_dbm']:6.1f} dBm  rmse={r['rmse_m']:.3e} m  peb={r['peb_m']:.3e} m")
    print(f"csv={path}")
    return 0


def cmd_select(args, ctx: Context) -> int:
    sc, sel = ctx.sc, ctx.selection
    if args.method == "s1":
        choice = select_strategy1(sc)
        print(f"reference={choice.reference} secondaries={choice.secondaries[0]},{choice.secondaries[1]}")
        rows = [{"reference": choice.reference, "s1": choice.secondaries[0], "s2": choice.secondaries[1]}]
    elif args.method == "s2":
        kw = {k: sel[k] for k in ("eps_deg", "gamma", "threshold", "grid_res") if k in sel}
        choice = select_strategy2(sc, **kw)
        print(f"reference={choice.reference} secondaries={choice.secondaries[0]},{choice.secondaries[1]} "
              f"coverage={choice.coverage:.6f}")
        scored = strategy2_scores(sc, **kw) if args.all else [choice]
        rows = [{"reference": t.reference, "s1": t.secondaries[0], "s2": t.secondaries[1],
                 "coverage": t.coverage} for t in scored]
    else:
        gamma = sel.get("gamma", 15.0)
        choice = select_polo2(sc, gamma)
        print(f"pair1={choice.pair1[0]},{choice.pair1[1]} pair2={choice.pair2[0]},{choice.pair2[1]} "
              f"intra_mean_m={choice.intra_mean:.6f} inter_dist_m={choice.inter_dist:.6f}")
        scored = [q for q in polo2_scores(sc) if q.intra_mean < gamma] if args.all else [choice]
        rows = [{"pair1": f"{q.pair1[0]}-{q.pair1[1]}", "pair2": f"{q.pair2[0]}-{q.pair2[1]}",
                 "intra_mean_m": q.intra_mean, "inter_dist_m": q.inter_dist} for q in scored]
    H.write_csv(rows, ctx.out / f"select_{args.method}.csv")
    return 0


def cmd_tradeoff(args, ctx: Context) -> int:
    sc = ctx.sc
    if not ctx.cfg:
        sc = grid_scenario()
    pts = H.tradeoff_study(sc, args.method, ctx.opt(args.gamma, "gamma", 15.0), ctx.seed,
                           ctx.opt(args.coverage_res, "coverage_res", 0.5),
                           ctx.opt(args.sample_res, "sample_res", 1.0), threads=ctx.threads,
                           cfg=ctx.pipeline)
    path = H.write_csv(H.tradeoff_rows(pts), ctx.out / f"tradeoff_{args.method}.csv")
    print(f"points={len(pts)} csv={path}")
    return 0


def cmd_render(args, ctx: Context) -> int:
    m = H.read_map_csv(args.input)
    out = Path(args.output) if args.output else ctx.out / (Path(args.input).stem + ".png")
    H.render_heatmap(m, out, args.scale, args.cell_px)
    print(f"image={out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [scenario], [selection], [pipeline], [experiment]")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes")

    p = argparse.ArgumentParser(prog="phaseloc", description="Phase-only UE localization experiments")
    sub = p.add_subparsers(dest="command", required=True)
    methods = list(H.METHODS) + list(H.ALIASES)

    for name in ("simulate", "estimate"):
        s = sub.add_parser(name, parents=[common], help="one snapshot and one estimate")
        s.add_argument("--method", choices=methods, default="polo2")
        s.add_argument("--ue", type=_point, default=None, help="x,y in meters")
        s.add_argument("--power-dbm", type=float, default=None)
        s.add_argument("--noiseless", action="store_true")
        if name == "estimate":
            s.add_argument("--obs", help="observation CSV (ap_index,re,im,phase)")
        s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rmse-map", parents=[common])
    s.add_argument("--method", choices=methods, default="polo2")
    s.add_argument("--res", type=float, default=None)
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_rmse_map)

    s = sub.add_parser("peb-map", parents=[common])
    s.add_argument("--variant", choices=H.PEB_VARIANTS, default="full")
    s.add_argument("--subset", help="comma-separated AP indices; default from AP selection")
    s.add_argument("--method", choices=["polo1-s1", "polo1-s2"], default=None,
                   help="selection rule for the triplet variant")
    s.add_argument("--res", type=float, default=None)
    s.set_defaults(func=cmd_peb_map)

    s = sub.add_parser("rmse-vs-power", parents=[common])
    s.add_argument("--methods", help="comma-separated method names")
    s.add_argument("--powers", help="comma-separated powers in dBm")
    s.add_argument("--ue", type=_point, default=None)
    s.add_argument("--trials", type=int, default=None)
    s.set_defaults(func=cmd_rmse_vs_power)

    s = sub.add_parser("select-aps", parents=[common])
    s.add_argument("--method", choices=["s1", "s2", "polo2"], default="s2")
    s.add_argument("--all", action="store_true", help="write every scored subset to CSV")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("tradeoff", parents=[common])
    s.add_argument("--method", choices=["polo1", "polo2"], default="polo1")
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--coverage-res", type=float, default=None)
    s.add_argument("--sample-res", type=float, default=None)
    s.set_defaults(func=cmd_tradeoff)

    s = sub.add_parser("render", parents=[common])
    s.add_argument("--input", required=True, help="map CSV from rmse-map or peb-map")
    s.add_argument("--output", help="PNG or SVG path")
    s.add_argument("--scale", choices=["log", "linear"], default="log")
    s.add_argument("--cell-px", type=int, default=8)
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ctx = Context(args)
    ctx.out.mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args, ctx)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
