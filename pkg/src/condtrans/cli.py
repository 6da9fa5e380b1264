"""``condtrans`` command-line interface.

Subcommands::

    condtrans run-synthetic --config FILE [--out DIR] [--seed N] [--iters N]
    condtrans run-denoise   --config FILE [--out DIR] [--seed N]
    condtrans project --d 1,2,3 --r 1,1,1 --kappa 2
    condtrans selftest

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure,
4 selftest violation. ``CONDTRANS_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config
from .denoise import DenoiseConfig, denoise
from .exceptions import DimensionError, InfeasibleProjectionError, NumericalError
from .imaging import PRNG_NAME, add_gaussian_noise, extract_patches, load_image, save_image
from .matcore import condition_number, dct_kron_init
from .specproj import solve_projection
from .tlearn import PenaltyParams, TransformConstraints, bresler_mu_grid, fit_bresler, fit_ortho, fit_proposed

__all__ = ["main", "cmd_run_synthetic", "cmd_run_denoise", "cmd_project", "cmd_selftest"]

logger = logging.getLogger("condtrans")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL, EXIT_SELFTEST = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _metadata(cfg, extra=None):
    meta = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed,
        "prng": PRNG_NAME,
    }
    if extra:
        meta.update(extra)
    return meta


def _header(meta):
    return "".join(f"# {k}: {meta[k]}\n" for k in meta)


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite(x):
    # JSON has no inf/nan literals
    return x if x is None or math.isfinite(x) else str(x)


# -- run-synthetic -----------------------------------------------------------


def build_training_data(paths, patch_size):
    """Non-overlapping mean-subtracted patches from every image, side by side."""
    blocks = []
    for p in paths:
        img = load_image(p)
        y, _ = extract_patches(img, patch_size, stride=patch_size, subtract_mean=True)
        blocks.append(y)
    return np.hstack(blocks)


def cmd_run_synthetic(cfg, out_dir):
    """Matched comparison of the three learners over the penalty-weight grid."""
    s = cfg.synthetic
    if not cfg.images:
        raise ConfigError("run-synthetic needs at least one image in experiment.images")
    y = build_training_data(cfg.images, s.patch_size)
    n, m = y.shape
    w0 = dct_kron_init(n)
    mus = bresler_mu_grid(y, w0, s.mu_factors)
    out_dir.mkdir(parents=True, exist_ok=True)

    curves = {k: [] for k in ("proposed", "bresler", "ortho")}
    summary_runs = []
    timings = {}
    _, _, log_o = fit_ortho(y, s.sparsity, w0=w0, iters=s.iters)
    timings["ortho"] = sum(r.ms for r in log_o.records)
    for i, mu in enumerate(mus):
        logger.info("mu[%d] = %.6g: bresler", i, mu)
        w_b, _, log_b = fit_bresler(y, PenaltyParams(mu, mu, s.sparsity), w0=w0, iters=s.iters)
        kappa, tau = condition_number(w_b), float(np.linalg.norm(w_b))
        logger.info("mu[%d]: proposed at kappa=%.6g tau=%.6g", i, kappa, tau)
        cons = TransformConstraints(max(kappa, 1.0), tau, s.sparsity)
        _, _, log_p = fit_proposed(y, cons, w0=w0, iters=s.iters)
        for name, log in (("bresler", log_b), ("proposed", log_p), ("ortho", log_o)):
            curves[name].append((mu, log))
        timings[f"mu{i}"] = {"bresler": sum(r.ms for r in log_b.records), "proposed": sum(r.ms for r in log_p.records)}
        summary_runs.append({
            "mu_index": i,
            "mu": mu,
            "kappa": kappa,
            "frob": tau,
            "final_err": {k: curves[k][-1][1].records[-1].err for k in curves},
            "final_err_normalized": {k: curves[k][-1][1].records[-1].err_normalized for k in curves},
            "proposed_v_step_increases": int(sum(r.v_step_increase_flag for r in log_p.records)),
        })

    meta = _metadata(cfg, {"command": "run-synthetic", "n": n, "m": m})
    for name, runs in curves.items():
        buf = io.StringIO()
        buf.write(_header(meta))
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["mu", "iter", "objective", "err", "err_normalized", "kappa", "frob", "v_step_increase_flag"])
        for mu, log in runs:
            for row in log.rows(include_timing=False):
                wr.writerow([repr(mu)] + [repr(v) if isinstance(v, float) else str(v) for v in row])
        (out_dir / f"curves_{name}.csv").write_text(buf.getvalue())
    summary = {"metadata": meta, "runs": summary_runs}
    (out_dir / "summary.json").write_text(_dump_json(summary))
    (out_dir / "timings.json").write_text(_dump_json(timings))
    return EXIT_OK


# -- run-denoise -------------------------------------------------------------


def _image_pairs(cfg):
    """``(name, clean or None, noisy path or None)`` per configured image."""
    if cfg.images:
        noisy = cfg.noisy_images or (None,) * len(cfg.images)
        return [(Path(c).stem, c, nz) for c, nz in zip(cfg.images, noisy)]
    return [(Path(nz).stem, None, nz) for nz in cfg.noisy_images]


def cmd_run_denoise(cfg, out_dir):
    """Denoise each (image, sigma, method) cell and tabulate PSNR/SSIM."""
    d = cfg.denoise
    pairs = _image_pairs(cfg)
    if not pairs:
        raise ConfigError("run-denoise needs experiment.images or experiment.noisy_images")
    out_dir.mkdir(parents=True, exist_ok=True)
    have_clean = all(c is not None for _, c, _ in pairs)
    if not have_clean:
        logger.warning("no clean reference image; PSNR/SSIM columns omitted")

    rows, reports, timings = [], [], {}
    for img_idx, (name, clean_path, noisy_path) in enumerate(pairs):
        clean = load_image(clean_path) if clean_path else None
        for sig_idx, sigma in enumerate(d.sigmas):
            if noisy_path is not None:
                noisy = load_image(noisy_path)
            else:
                noisy = add_gaussian_noise(clean, sigma, cfg.seed + 1000 * img_idx + sig_idx)
            bresler_measured = None
            # bresler first so the proposed cell can reuse its (kappa, tau)
            for method in sorted(d.methods, key=lambda m: m != "bresler"):
                dc = DenoiseConfig(
                    method=method, sigma_noise=sigma, c_factor=d.c_factor, beta_rel=d.beta_rel,
                    patch_size=d.patch_size, stride=d.stride, outer_iters=d.outer_iters,
                    inner_iters=d.inner_iters, cond_bound=d.cond_bound, frob_target=d.frob_target,
                    mu_scale=d.mu_scale, sparsity_search=d.sparsity_search, sparsity_rule=d.sparsity_rule,
                )
                reused = None
                if method == "proposed" and bresler_measured and (dc.cond_bound is None or dc.frob_target is None):
                    # reuse the bresler cell instead of a second pre-run
                    reused = bresler_measured
                    dc = replace(dc, **{k: v for k, v in reused.items() if getattr(dc, k) is None})
                logger.info("denoise %s sigma=%g method=%s", name, sigma, method)
                out, rep = denoise(noisy, dc, clean=clean)
                if method == "bresler":
                    bresler_measured = {"cond_bound": rep.kappa, "frob_target": rep.frob}
                if reused is not None:
                    rep.matched_from = reused
                save_image(out, out_dir / f"denoised_{name}_{sigma:g}_{method}.pgm")
                row = {"image": name, "sigma": sigma, "method": method, "kappa": rep.kappa, "frob": rep.frob}
                if have_clean:
                    row.update(psnr_noisy=rep.psnr_noisy, psnr=rep.psnr, ssim=rep.ssim)
                rows.append(row)
                reports.append({"image": name, "sigma": sigma, **rep.to_dict(include_timing=False)})
                timings[f"{name}/{sigma:g}/{method}"] = rep.seconds

    meta = _metadata(cfg, {"command": "run-denoise"})
    cols = ["image", "sigma", "method"] + (["psnr_noisy", "psnr", "ssim"] if have_clean else []) + ["kappa", "frob"]
    buf = io.StringIO()
    buf.write(_header(meta))
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for r in rows:
        wr.writerow([repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols])
    (out_dir / "results.csv").write_text(buf.getvalue())
    table = [{k: (_finite(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows]
    (out_dir / "summary.json").write_text(_dump_json({"metadata": meta, "results": table, "reports": reports}))
    (out_dir / "timings.json").write_text(_dump_json(timings))
    return EXIT_OK


# -- project / selftest ------------------------------------------------------


def _csv_floats(text, name):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--{name} must be a comma-separated list of numbers") from None
    if not vals:
        raise ConfigError(f"--{name} is empty")
    return np.array(vals)


def cmd_project(d, r, kappa, stream=None):
    """Solve one spectrum projection and print ``{s_star, l_star, objective}``."""
    stream = stream or sys.stdout
    sol = solve_projection((d, r, kappa))
    stream.write(json.dumps({
        "s_star": [float(v) for v in sol.s_star],
        "l_star": float(sol.l_star),
        "objective": float(sol.objective),
    }) + "\n")
    return EXIT_OK


def cmd_selftest(stream=None):
    from .selftest import run_selftest

    stream = stream or sys.stdout
    ok = run_selftest(stream)
    return EXIT_OK if ok else EXIT_SELFTEST


# -- entry point -------------------------------------------------------------


def build_parser():
    p = _Parser(prog="condtrans", description="Condition-number-constrained sparsifying transforms.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("run-synthetic", "matched transform-learning comparison"),
                           ("run-denoise", "patch-based denoising table")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, help="output directory (overrides experiment.out)")
        sp.add_argument("--seed", type=int, help="override experiment.seed")
        if name == "run-synthetic":
            sp.add_argument("--iters", type=int, help="override synthetic.iters")

    sp = sub.add_parser("project", help="solve one spectrum projection")
    sp.add_argument("--d", required=True, help="comma-separated targets")
    sp.add_argument("--r", required=True, help="comma-separated weights")
    sp.add_argument("--kappa", required=True, type=float)

    sub.add_parser("selftest", help="run the built-in consistency checks")
    return p


def _apply_threads():
    val = os.environ.get("CONDTRANS_THREADS")
    if not val:
        return None
    try:
        k = int(val)
        if k < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"CONDTRANS_THREADS must be a positive integer, got {val!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=k)


def _run(args):
    if args.command == "project":
        return cmd_project(_csv_floats(args.d, "d"), _csv_floats(args.r, "r"), args.kappa)
    if args.command == "selftest":
        return cmd_selftest()
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if getattr(args, "iters", None) is not None:
        cfg = cfg.with_overrides(synthetic=replace(cfg.synthetic, iters=args.iters))
    out_dir = args.out if args.out is not None else Path(cfg.out)
    if args.command == "run-synthetic":
        return cmd_run_synthetic(cfg, out_dir)
    return cmd_run_denoise(cfg, out_dir)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        limiter = _apply_threads()
        try:
            code = _run(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (ConfigError, InfeasibleProjectionError, DimensionError) as exc:
        print(f"condtrans: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"condtrans: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed image files and similar input problems
        print(f"condtrans: error: {exc}", file=sys.stderr)
        return EXIT_IO if args.command.startswith("run-") else EXIT_USAGE
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"condtrans: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    logger.info("done in %.1f s", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
