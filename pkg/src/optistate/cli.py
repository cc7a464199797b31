"""``optistate`` command line: simulate, train-vit, train-gru, evaluate, report.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
divergence, 4 file I/O failure. Each command writes one ``<command>.manifest``
(key = value text) beside its outputs recording the resolved configuration,
inputs, outputs and timings.
"""
import argparse
import glob
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .config import SimConfig, apply_kv, format_kv, known_keys, read_kv, to_kv
from .errors import (CheckpointMismatch, ConfigError, DivergedError, FormatError, Infeasible,
                     MissingTruth, NoContact, OptiStateError, ShapeError)
from .experiment import BASELINE, evaluate, variant_name, vit_corpus
from .kalman import KalmanFilter
from .nn import gru as gru_mod
from .nn import vit as vit_mod
from .pipeline import Models, trajectory_features
from .profiles import get_profile, suite
from .report import (band_figure, loss_figure, overlay_figure, read_columns, read_csv, save_svg,
                     write_estimates, write_loss_csv, write_rmse_tables)
from .sim.dataset_io import read_dataset, write_dataset
from .sim.simulator import simulate
from .state import STATE_NAMES

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
DATASET_EXT = ".ostd"
PROFILE_PREFIX = "profile."


class UsageError(OptiStateError):
    """Bad combination of command-line inputs."""


# -- configuration -----------------------------------------------------------------

def load_settings(args):
    """``(SimConfig, Profile)`` from the profile, ``--config`` and ``--seed``.

    Keys prefixed ``profile.`` override the run profile (sizes, training
    hyperparameters); every other key overrides the simulator config.
    """
    base = SimConfig()
    profile = get_profile(args.profile)
    if args.config:
        mapping = read_kv(args.config)
        sim_keys = known_keys(base)
        prof_keys = {PROFILE_PREFIX + k for k in known_keys(profile)}
        for key in mapping:
            if key not in sim_keys and key not in prof_keys:
                raise ConfigError(key, "unknown configuration key")
        base = apply_kv(base, {k: v for k, v in mapping.items() if k in sim_keys})
        prof = {k[len(PROFILE_PREFIX):]: v for k, v in mapping.items() if k in prof_keys}
        profile = apply_kv(profile, prof)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        base = replace(base, seed=args.seed)
        profile = profile.with_seed(args.seed)
    base.validate()
    vit = profile.vit
    if (vit.image_height, vit.image_width) != (profile.camera.height, profile.camera.width):
        raise ConfigError("profile.vit.image_height",
                          "ViT image size must equal the camera size "
                          f"({profile.camera.height}x{profile.camera.width})")
    return base, profile


class Manifest:
    """Collects run metadata and writes it as ``<command>.manifest``."""

    def __init__(self, command, args, base, profile):
        self.start = time.perf_counter()
        self.items = [("command", command), ("argv", " ".join(sys.argv[1:])),
                      ("version", __version__), ("seed", base.seed)]
        self.items += [("sim." + k, v) for k, v in to_kv(base)]
        self.items += [(PROFILE_PREFIX + k, v) for k, v in to_kv(profile)]
        self.inputs, self.outputs, self.timings = [], [], []

    def timed(self, label, t0):
        self.timings.append((f"time.{label}", round(time.perf_counter() - t0, 3)))

    def write(self, out_dir, name):
        items = self.items + [("inputs", ",".join(self.inputs)), ("outputs", ",".join(self.outputs))]
        items += self.timings + [("time.total", round(time.perf_counter() - self.start, 3))]
        with open(os.path.join(out_dir, name + ".manifest"), "w", encoding="utf-8") as fh:
            fh.write(format_kv(items))


def _say(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


def _datasets(data_dir, prefix):
    paths = sorted(glob.glob(os.path.join(data_dir, prefix + "*" + DATASET_EXT)))
    if not paths:
        raise UsageError(f"no {prefix}*{DATASET_EXT} datasets in {data_dir}")
    return {os.path.basename(p)[:-len(DATASET_EXT)]: read_dataset(p) for p in paths}, paths


def _require_file(path, what):
    if not path or not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args):
    base, profile = load_settings(args)
    man = Manifest("simulate", args, base, profile)
    os.makedirs(args.out, exist_ok=True)
    if args.single:
        runs = [("trajectory", replace(base, camera=profile.camera))]
    else:
        runs = suite(profile, base.seed, base)
    for name, cfg in runs:
        t0 = time.perf_counter()
        ds = simulate(cfg)
        path = os.path.join(args.out, name + DATASET_EXT)
        write_dataset(ds, path)
        man.outputs.append(path)
        man.timed(name, t0)
        _say(args, f"{name}: {len(ds)} frames, {ds.depth.shape[0]} depth images")
    man.write(args.out, "simulate")
    return EXIT_OK


def cmd_train_vit(args):
    base, profile = load_settings(args)
    man = Manifest("train-vit", args, base, profile)
    sets, paths = _datasets(args.data, "train_")
    man.inputs += paths
    os.makedirs(args.out, exist_ok=True)
    images = vit_corpus(list(sets.values()), profile.vit_images, profile.vit_train.seed)
    t0 = time.perf_counter()
    log = (lambda e, v: _say(args, f"vit epoch {e + 1}: {v:.6g}"))
    params, hist = vit_mod.train_vit(images, profile.vit, profile.vit_train, log=log)
    man.timed("train", t0)
    ckpt = os.path.join(args.out, "vit.osvt")
    vit_mod.save_vit(ckpt, params, profile.vit)
    write_loss_csv(os.path.join(args.out, "vit_loss.csv"), hist)
    save_svg(loss_figure({"ViT reconstruction": hist}), os.path.join(args.out, "vit_loss.svg"))
    man.outputs += [ckpt, "vit_loss.csv", "vit_loss.svg"]
    man.write(args.out, "train-vit")
    return EXIT_OK


def cmd_train_gru(args):
    base, profile = load_settings(args)
    _require_file(args.vit, "ViT checkpoint")
    vit_params, vit_cfg = vit_mod.load_vit(args.vit, expect=profile.vit)
    cfg = replace(profile.gru, ablate_kf=args.ablate_kf_input, ablate_vision=args.ablate_vision)
    name = variant_name(cfg)
    man = Manifest("train-gru", args, base, profile)
    man.items.append(("variant", name))
    sets, paths = _datasets(args.data, "train_")
    man.inputs += paths + [args.vit]
    os.makedirs(args.out, exist_ok=True)
    for ds in sets.values():
        if not ds.has_truth:
            raise MissingTruth("training datasets need ground truth on every frame")
    t0 = time.perf_counter()
    kf = KalmanFilter(dt=next(iter(sets.values())).dt)
    feats = [trajectory_features(ds, kf, vit_params, vit_cfg) for ds in sets.values()]
    man.timed("features", t0)
    t0 = time.perf_counter()
    log = (lambda e, v: _say(args, f"gru[{name}] epoch {e + 1}: {v:.6g}"))
    params, norm, hist = gru_mod.train_gru([f for f, _ in feats], [x for _, x in feats],
                                           [ds.truth for ds in sets.values()], cfg,
                                           profile.gru_train, log=log)
    man.timed("train", t0)
    ckpt = os.path.join(args.out, f"gru_{name}.osgr")
    gru_mod.save_gru(ckpt, params, norm, cfg)
    write_loss_csv(os.path.join(args.out, f"gru_{name}_loss.csv"), hist)
    save_svg(loss_figure({f"GRU {name}": hist}), os.path.join(args.out, f"gru_{name}_loss.svg"))
    man.outputs += [ckpt, f"gru_{name}_loss.csv", f"gru_{name}_loss.svg"]
    man.write(args.out, f"train-gru-{name}")
    return EXIT_OK


def _select_ablation(args, loaded):
    """Keep the checkpoints whose ablation matches the command-line flags.

    With no ablation flag every checkpoint is evaluated; with a flag, exactly
    the matching variant must be among them.
    """
    if not (args.ablate_kf_input or args.ablate_vision):
        return loaded
    want = variant_name(gru_mod.GruConfig(ablate_kf=args.ablate_kf_input, ablate_vision=args.ablate_vision))
    keep = {k: v for k, v in loaded.items() if k == want}
    if not keep:
        raise CheckpointMismatch(f"no GRU checkpoint for variant {want!r}; got {sorted(loaded)}")
    return keep


def cmd_evaluate(args):
    base, profile = load_settings(args)
    man = Manifest("evaluate", args, base, profile)
    tests, paths = _datasets(args.data, "test_")
    man.inputs += paths
    test_sets = {name[len("test_"):]: ds for name, ds in tests.items()}
    for ds in test_sets.values():
        if not ds.has_truth:
            raise MissingTruth("evaluation datasets need ground truth")
    models = {}
    vit_params = vit_cfg = None
    if not args.kf_only:
        if not args.gru:
            raise UsageError("evaluate needs --gru checkpoints unless --kf-only is given")
        for path in args.gru:
            _require_file(path, "GRU checkpoint")
            params, norm, cfg = gru_mod.load_gru(path)
            name = variant_name(cfg)
            if name in models:
                raise UsageError(f"two checkpoints for variant {name!r}")
            models[name] = Models(params, norm, cfg)
            man.inputs.append(path)
        models = _select_ablation(args, models)
        if any(not m.gru_cfg.ablate_vision for m in models.values()):
            _require_file(args.vit, "ViT checkpoint")
            vit_params, vit_cfg = vit_mod.load_vit(args.vit)
            man.inputs.append(args.vit)
            for m in models.values():
                if not m.gru_cfg.ablate_vision:
                    m.vit_params, m.vit_cfg = vit_params, vit_cfg
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    kf = KalmanFilter(dt=next(iter(test_sets.values())).dt)
    feats = [trajectory_features(ds, kf, vit_params, vit_cfg) for ds in test_sets.values()]
    ev = evaluate(test_sets, feats, models, kf)
    man.timed("evaluate", t0)
    write_rmse_tables(args.out, ev, BASELINE)
    man.outputs += ["rmse.csv", "improvement.csv"]
    variants = [BASELINE] + list(models)
    for t, ds in test_sets.items():
        est = {v: ev.estimates[(v, t)] for v in variants}
        write_estimates(os.path.join(args.out, f"estimates_{t}.csv"), ds.t, ds.truth, est)
        fig = overlay_figure(ds.t, ds.truth, {v: est[v][0] for v in variants}, title=f"{t} terrain")
        save_svg(fig, os.path.join(args.out, f"overlay_{t}.svg"))
        man.outputs += [f"estimates_{t}.csv", f"overlay_{t}.svg"]
    man.items.append(("mu_spearman", ev.mu_spearman))
    for v in variants:
        man.items.append((f"mean_rmse.{v}", ev.mean_rmse(v)))
        _say(args, f"{v}: mean RMSE {ev.mean_rmse(v):.6g}"
             + ("" if v == BASELINE else f" ({100 * ev.improvement(v):+.1f}% vs {BASELINE})"))
    man.write(args.out, "evaluate")
    return EXIT_OK


def _band_series(cols, variant):
    t = cols["t"]
    x = np.column_stack([cols[f"{variant}_{n}"] for n in STATE_NAMES])
    mu = np.column_stack([cols[f"{variant}_mu_{n}"] for n in STATE_NAMES])
    truth = np.column_stack([cols[f"truth_{n}"] for n in STATE_NAMES])
    return t, x, mu, truth


def cmd_report(args):
    run = args.run
    if not os.path.isdir(run):
        raise UsageError(f"run directory {run} does not exist")
    est_paths = sorted(glob.glob(os.path.join(run, "estimates_*.csv")))
    if not est_paths:
        raise UsageError(f"no evaluation outputs (estimates_*.csv) in {run}")
    out = args.out or os.path.join(run, "report")
    os.makedirs(out, exist_ok=True)
    written = []
    for path in est_paths:
        terrain = os.path.basename(path)[len("estimates_"):-len(".csv")]
        cols = read_columns(path)
        for key in cols:
            if key.endswith("_mu_" + STATE_NAMES[0]):
                variant = key[:-len("_mu_" + STATE_NAMES[0])]
                t, x, mu, truth = _band_series(cols, variant)
                fig = band_figure(t, x, mu, truth, title=f"{variant} on {terrain}: estimate +- mu")
                name = f"band_{variant}_{terrain}.svg"
                save_svg(fig, os.path.join(out, name))
                written.append(name)
    losses = {}
    for path in sorted(glob.glob(os.path.join(run, "*_loss.csv"))):
        losses[os.path.basename(path)[:-len("_loss.csv")]] = read_columns(path)["loss"]
    if losses:
        save_svg(loss_figure(losses), os.path.join(out, "loss_curves.svg"))
        written.append("loss_curves.svg")
    rmse_path = os.path.join(run, "rmse.csv")
    if os.path.exists(rmse_path):
        header, rows = read_csv(rmse_path)
        summary = [r for r in rows if r[1] == "all"]
        with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            fh.writelines(",".join(r) + "\n" for r in summary)
        written.append("summary.csv")
    with open(os.path.join(out, "report.manifest"), "w", encoding="utf-8") as fh:
        fh.write(format_kv([("command", "report"), ("version", __version__), ("run", run),
                            ("outputs", ",".join(written))]))
    _say(args, f"wrote {len(written)} files to {out}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="optistate", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--version", action="version", version=f"optistate {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", metavar="PATH", help="key = value overrides; 'profile.' keys tune the run profile")
        sp.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (default: config value, 0)")
        sp.add_argument("--profile", choices=("paper", "small"), default="small", help="size preset")
        sp.add_argument("--out", metavar="DIR", required=True, help=out_help)
        sp.add_argument("-q", "--quiet", action="store_true", help="no progress output")

    sp = sub.add_parser("simulate", help="generate the training and held-out datasets",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(sp, "output directory for .ostd datasets")
    sp.add_argument("--single", action="store_true", help="simulate just the configured trajectory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train-vit", help="train the depth autoencoder",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(sp, "output directory for the checkpoint and loss curve")
    sp.add_argument("--data", metavar="DIR", required=True, help="directory with train_*.ostd")
    sp.set_defaults(func=cmd_train_vit)

    sp = sub.add_parser("train-gru", help="train the GRU correction network",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(sp, "output directory for the checkpoint and loss curve")
    sp.add_argument("--data", metavar="DIR", required=True, help="directory with train_*.ostd")
    sp.add_argument("--vit", metavar="PATH", required=True, help="ViT checkpoint")
    sp.add_argument("--ablate-kf-input", action="store_true", help="zero the KF-estimate input columns")
    sp.add_argument("--ablate-vision", action="store_true", help="zero the depth-latent input columns")
    sp.set_defaults(func=cmd_train_gru)

    sp = sub.add_parser("evaluate", help="RMSE of the KF and trained variants on held-out data",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(sp, "output directory for CSV tables and overlays")
    sp.add_argument("--data", metavar="DIR", required=True, help="directory with test_*.ostd")
    sp.add_argument("--vit", metavar="PATH", help="ViT checkpoint (needed unless every GRU ablates vision)")
    sp.add_argument("--gru", metavar="PATH", action="append", default=[], help="GRU checkpoint; repeatable")
    sp.add_argument("--ablate-kf-input", action="store_true", help="evaluate only the no-KF-input variant")
    sp.add_argument("--ablate-vision", action="store_true", help="evaluate only the no-vision variant")
    sp.add_argument("--kf-only", action="store_true", help="evaluate only the KF baseline")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="uncertainty bands, loss curves and a summary table",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sp.add_argument("--run", metavar="DIR", required=True, help="evaluation (and training) output directory")
    sp.add_argument("--out", metavar="DIR", help="output directory (default: RUN/report)")
    sp.add_argument("-q", "--quiet", action="store_true", help="no progress output")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, CheckpointMismatch, MissingTruth, ShapeError) as exc:
        print(f"optistate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergedError, FloatingPointError, Infeasible, NoContact) as exc:
        print(f"optistate: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FormatError) as exc:
        print(f"optistate: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
