"""Command-line pipeline: one run directory, eight subcommands.

Stages communicate only through files in the run directory, each stamped
with the configuration's dataset hash so downstream stages can refuse
artifacts from a different dataset.  Overrides layer as
config file < THERMOROM_* environment < command-line flags.  Outputs are
immutable: an existing artifact is never replaced without --overwrite.

Errors exit nonzero with a single stderr line ``error <category>:
<detail>`` (categories: config, io, data, runtime, internal) so callers
can dispatch on the category without parsing prose.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, network, pca, synth, tuner
from .calibration import calibration_error
from .config import ConfigError, RunConfig, apply_env_overrides
from .drivers import (
    GapError,
    feature_matrix,
    fit_scaler,
    load_driver_csv,
    split_dataset,
)
from .grid import AltitudeRangeError, GridSeries
from .network import Network
from .orbit import circular_orbit_ephemeris, storm_window_eval
from .pca import CoefficientSeries, PcaBasis
from .report import binned_error_table, make_score_table, save_score_tables_csv
from .storage import StorageError, read_csv, stream, write_csv

_TAG_EVAL = 41
_TAG_CALIBRATE = 42

MANIFEST_NAME = "manifest.json"


class CliError(Exception):
    """Pipeline failure with a machine-readable category."""

    def __init__(self, category: str, detail: str):
        super().__init__(detail)
        self.category = category
        self.detail = detail


def _out_path(out: Path, name: str, overwrite: bool) -> Path:
    path = out / name
    if path.exists() and not overwrite:
        raise CliError(
            "io", f"refusing to overwrite existing {path} (pass --overwrite)"
        )
    return path


def _versions() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "thermorom": __version__,
    }


def _update_manifest(out: Path, cfg: RunConfig, stage: str, artifacts) -> None:
    path = out / MANIFEST_NAME
    dataset_hash = cfg.dataset_hash()
    if path.exists():
        manifest = json.loads(path.read_text())
        if manifest.get("dataset_hash") != dataset_hash:
            raise CliError(
                "config",
                f"run directory {out} belongs to dataset "
                f"{manifest.get('dataset_hash')}, config gives {dataset_hash}",
            )
    else:
        manifest = {
            "dataset_hash": dataset_hash,
            "seed": cfg.run.seed,
            "versions": _versions(),
            "stages": {},
        }
    manifest["stages"][stage] = {"artifacts": sorted(str(a) for a in artifacts)}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _annotations(cfg: RunConfig, **extra) -> dict:
    ann = {"config_hash": cfg.dataset_hash()}
    ann.update(extra)
    return ann


def _check_hash(cfg: RunConfig, annotations: dict, path) -> None:
    found = annotations.get("config_hash")
    if found != cfg.dataset_hash():
        raise CliError(
            "config",
            f"{path} was produced under config hash {found}, "
            f"current config gives {cfg.dataset_hash()}",
        )


def _model_tag(cfg: RunConfig) -> str:
    return f"{cfg.train.loss}_{cfg.features.set_id}"


# ---------------------------------------------------------------- stages


def run_synth(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Generate drivers + density grid; write CSVs and the grid blob."""
    drivers_path = _out_path(out, "drivers.csv", overwrite)
    dst_path = _out_path(out, "hourly_dst.csv", overwrite)
    grid_path = _out_path(out, "grid.bin", overwrite)

    scfg = cfg.synth_config()
    drivers = synth.gen_drivers(scfg)
    series = synth.gen_density(drivers, cfg.grid_spec(), scfg)

    drivers.save_csv(drivers_path, _annotations(cfg))
    drivers.save_hourly_dst_csv(dst_path, _annotations(cfg))
    series.save(grid_path, {"config_hash": cfg.dataset_hash()})
    _update_manifest(out, cfg, "synth", ["drivers.csv", "hourly_dst.csv", "grid.bin"])
    return {"drivers": drivers_path, "hourly_dst": dst_path, "grid": grid_path}


def _load_grid(cfg: RunConfig, out: Path) -> GridSeries:
    path = out / "grid.bin"
    series, meta = GridSeries.load(path)
    _check_hash(cfg, meta, path)
    return series


def _load_drivers(cfg: RunConfig, out: Path):
    path = out / "drivers.csv"
    annotations, *_ = read_csv(path)
    _check_hash(cfg, annotations, path)
    return load_driver_csv(path, out / "hourly_dst.csv")


def _load_basis(cfg: RunConfig, out: Path) -> PcaBasis:
    path = out / "basis.bin"
    basis, meta = PcaBasis.load(path)
    _check_hash(cfg, meta, path)
    return basis


def run_decompose(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Fit the truncated basis and write basis + coefficient series."""
    basis_path = _out_path(out, "basis.bin", overwrite)
    coef_path = _out_path(out, "coefficients.csv", overwrite)

    series = _load_grid(cfg, out)
    split = split_dataset(len(series), cfg.split_fractions(), cfg.split_layout())
    fit_idx = (
        split.train if cfg.pca.fit_on == "train" else np.arange(len(series))
    )
    basis, _ = pca.fit(
        series.states[fit_idx],
        order=cfg.pca.order,
        epochs=series.epochs[fit_idx],
        method=cfg.pca.method,
        grid_hash=series.spec.content_hash(),
    )
    alphas = pca.encode(basis, series.states)
    coeffs = CoefficientSeries(epochs=series.epochs, alphas=alphas)

    basis.save(basis_path, {"config_hash": cfg.dataset_hash()})
    coeffs.save_csv(coef_path, _annotations(cfg))
    _update_manifest(out, cfg, "decompose", ["basis.bin", "coefficients.csv"])
    return {"basis": basis_path, "coefficients": coef_path}


def _load_arrays(cfg: RunConfig, out: Path):
    """Features/targets/split shared by train, tune, evaluate, calibrate.

    Rows whose lag window reaches before the series start are dropped
    from every split consistently.
    """
    drivers = _load_drivers(cfg, out)
    coef_path = out / "coefficients.csv"
    coeffs, annotations = CoefficientSeries.load_csv(coef_path)
    _check_hash(cfg, annotations, coef_path)
    if not np.array_equal(coeffs.epochs, drivers.epochs):
        raise CliError("data", "coefficient and driver epochs disagree")

    X, ok = feature_matrix(drivers, cfg.features.set_id, drivers.epochs)
    split = split_dataset(len(coeffs), cfg.split_fractions(), cfg.split_layout())
    take = lambda idx: idx[ok[idx]]  # noqa: E731
    return {
        "drivers": drivers,
        "coeffs": coeffs,
        "X": X,
        "train": take(split.train),
        "validation": take(split.validation),
        "test": take(split.test),
    }


def run_train(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Train one model for the configured loss and input set."""
    tag = _model_tag(cfg)
    model_path = _out_path(out, f"model_{tag}.bin", overwrite)
    history_path = _out_path(out, f"history_{tag}.csv", overwrite)

    data = _load_arrays(cfg, out)
    basis = _load_basis(cfg, out)
    X, coeffs = data["X"], data["coeffs"]
    tr, va = data["train"], data["validation"]
    scaler = fit_scaler(X[tr])

    net = network.init(
        cfg.hidden_layers(),
        input_dim=X.shape[1],
        output_dim=coeffs.order,
        seed=cfg.run.seed,
        scaler=scaler,
        set_id=cfg.features.set_id,
        basis_hash=basis.grid_hash,
    )
    net, history = network.train(
        net,
        X[tr],
        coeffs.alphas[tr],
        X[va],
        coeffs.alphas[va],
        cfg.loss_config(),
        cfg.opt_config(),
        seed=cfg.run.seed,
    )
    if cfg.train.refine_epochs > 0:
        net, refine_history = network.train(
            net,
            X[tr],
            coeffs.alphas[tr],
            X[va],
            coeffs.alphas[va],
            cfg.refine_loss_config(),
            cfg.refine_opt_config(),
            seed=cfg.run.seed + 1,
        )
        offset = len(history)
        history = history + [
            (offset + e, train_loss, val_loss)
            for e, train_loss, val_loss in refine_history
        ]
    net.save(model_path, {"config_hash": cfg.dataset_hash(), "loss": cfg.train.loss})
    write_csv(
        history_path,
        ("epoch", "train_loss", "val_loss"),
        history,
        _annotations(cfg, loss=cfg.train.loss, set_id=cfg.features.set_id),
    )
    _update_manifest(
        out, cfg, f"train:{tag}", [f"model_{tag}.bin", f"history_{tag}.csv"]
    )
    return {"model": model_path, "history": history_path}


def run_tune(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Architecture search; writes the ledger and the top trial models."""
    tag = _model_tag(cfg)
    ledger_path = _out_path(out, f"tuner_ledger_{tag}.csv", overwrite)
    if overwrite and ledger_path.exists():
        ledger_path.unlink()

    data = _load_arrays(cfg, out)
    basis = _load_basis(cfg, out)
    X, coeffs = data["X"], data["coeffs"]
    tr, va = data["train"], data["validation"]
    scaler = fit_scaler(X[tr])

    budget = cfg.search_budget()
    objective = tuner.make_training_objective(
        X[tr],
        coeffs.alphas[tr],
        X[va],
        coeffs.alphas[va],
        cfg.loss_config(),
        scaler,
        set_id=cfg.features.set_id,
        basis_hash=basis.grid_hash,
        batch_size=cfg.train.batch_size,
    )
    ledger = tuner.TunerLedger(ledger_path, budget.replicates)
    ranked = tuner.search(
        cfg.search_space(),
        budget,
        objective,
        seed=cfg.run.seed,
        keep_top=cfg.tuner.keep_top,
        ledger=ledger,
    )

    artifacts = [ledger_path.name]
    model_paths = []
    for rank, trial in enumerate(ranked[: cfg.tuner.keep_top]):
        if trial.model is None:
            continue
        name = f"tuned_{tag}_{rank:02d}.bin"
        path = _out_path(out, name, overwrite)
        trial.model.save(
            path,
            {
                "config_hash": cfg.dataset_hash(),
                "loss": cfg.train.loss,
                "trial_id": trial.trial_id,
                "val_loss": trial.val_loss,
                "replicate_seed": trial.replicate_seeds[trial.best_replicate],
            },
        )
        artifacts.append(name)
        model_paths.append(path)
    _update_manifest(out, cfg, f"tune:{tag}", artifacts)
    return {"ledger": ledger_path, "models": model_paths, "trials": ranked}


def _load_model(cfg: RunConfig, out: Path) -> Network:
    tag = _model_tag(cfg)
    path = out / f"model_{tag}.bin"
    if not path.exists():
        raise CliError("io", f"model artifact {path} not found; run train first")
    net = Network.load(path)
    _check_hash(cfg, net.meta, path)
    if net.set_id != cfg.features.set_id:
        raise CliError(
            "config",
            f"model {path} was trained on inputs {net.set_id!r}, "
            f"config asks for {cfg.features.set_id!r}",
        )
    return net


def run_evaluate(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Density-space MAE of the trained model, binned by conditions."""
    tag = _model_tag(cfg)
    mae_path = _out_path(out, f"mae_{tag}.csv", overwrite)

    data = _load_arrays(cfg, out)
    basis = _load_basis(cfg, out)
    series = _load_grid(cfg, out)
    net = _load_model(cfg, out)
    te = data["test"]

    rng = stream(cfg.run.seed, _TAG_EVAL)
    mu, _ = network.mc_predict_stats(net, data["X"][te], cfg.eval.k, rng)
    pred = pca.decode(basis, mu)
    truth = 10.0 ** series.states[te]

    drivers = data["drivers"]
    f10 = drivers.step_sample("F10", drivers.epochs[te])
    ap = drivers.step_sample("ap", drivers.epochs[te])
    table = binned_error_table(pred, truth, f10, ap)
    table.save_csv(
        mae_path,
        _annotations(
            cfg,
            loss=cfg.train.loss,
            set_id=cfg.features.set_id,
            split="test",
            eval_hash=cfg.eval_hash(),
            overall_mae_percent=table.overall,
        ),
    )
    _update_manifest(out, cfg, f"evaluate:{tag}", [mae_path.name])
    return {"mae": mae_path, "table": table}


def run_calibrate(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Coefficient-space interval coverage of the trained model."""
    tag = _model_tag(cfg)
    cal_path = _out_path(out, f"calibration_{tag}.csv", overwrite)

    data = _load_arrays(cfg, out)
    net = _load_model(cfg, out)
    te = data["test"]

    rng = stream(cfg.run.seed, _TAG_CALIBRATE)
    mu, sigma = network.mc_predict_stats(net, data["X"][te], cfg.eval.k, rng)
    rep = calibration_error(
        mu, sigma, data["coeffs"].alphas[te], cfg.interval_set()
    )
    rep.save_curve_csv(
        cal_path,
        _annotations(
            cfg,
            loss=cfg.train.loss,
            set_id=cfg.features.set_id,
            split="test",
            eval_hash=cfg.eval_hash(),
            score=rep.score,
        ),
    )
    _update_manifest(out, cfg, f"calibrate:{tag}", [cal_path.name])
    return {"calibration": cal_path, "report": rep}


def run_orbit(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Orbit-averaged density series + density-space calibration."""
    tag = _model_tag(cfg)
    series_path = _out_path(out, f"orbit_{tag}.csv", overwrite)
    cal_path = _out_path(out, f"orbit_calibration_{tag}.csv", overwrite)

    drivers = _load_drivers(cfg, out)
    basis = _load_basis(cfg, out)
    grid_series = _load_grid(cfg, out)
    net = _load_model(cfg, out)

    ocfg = cfg.orbit
    eph = circular_orbit_ephemeris(
        start_epoch=int(drivers.epochs[0]),
        duration_s=int(round(ocfg.duration_days * 86400)),
        cadence_s=ocfg.cadence_s,
        altitude_km=ocfg.altitude_km,
        inclination_deg=ocfg.inclination_deg,
    )
    series, rep, _ = storm_window_eval(
        net,
        basis,
        grid_series.spec,
        drivers,
        eph,
        grid_series,
        days=ocfg.duration_days,
        k=ocfg.k,
        stride=ocfg.stride,
        seed=cfg.run.seed,
        intervals=cfg.interval_set(),
    )
    series.save_csv(
        series_path,
        _annotations(cfg, loss=cfg.train.loss, set_id=cfg.features.set_id),
    )
    rep.save_curve_csv(
        cal_path,
        _annotations(
            cfg,
            loss=cfg.train.loss,
            set_id=cfg.features.set_id,
            score=rep.score,
            space="density",
        ),
    )
    _update_manifest(
        out, cfg, f"orbit:{tag}", [series_path.name, cal_path.name]
    )
    return {"orbit": series_path, "calibration": cal_path, "report": rep}


def run_report(cfg: RunConfig, out: Path, overwrite: bool = False) -> dict:
    """Collect per-model artifacts into loss-by-input score tables."""
    tables_path = _out_path(out, "score_tables.csv", overwrite)
    text_path = _out_path(out, "report.txt", overwrite)

    def _checked(path):
        annotations, *_ = read_csv(path)
        _check_hash(cfg, annotations, path)
        if annotations.get("eval_hash") != cfg.eval_hash():
            raise CliError(
                "config",
                f"{path} was evaluated under a different protocol "
                f"(k / interval levels) than the current config",
            )
        return annotations

    mae_cells: dict = {}
    cal_cells: dict = {}
    found = []
    for path in sorted(out.glob("mae_*.csv")):
        annotations = _checked(path)
        key = (annotations["loss"], annotations["set_id"])
        mae_cells[key] = float(annotations["overall_mae_percent"])
        found.append(path.name)
    for path in sorted(out.glob("calibration_*.csv")):
        annotations = _checked(path)
        key = (annotations["loss"], annotations["set_id"])
        cal_cells[key] = float(annotations["score"])
        found.append(path.name)
    if not found:
        raise CliError(
            "data", f"no mae_*/calibration_* artifacts in {out}; nothing to report"
        )

    tables = []
    if mae_cells:
        tables.append(make_score_table("test", "mae_percent", mae_cells))
    if cal_cells:
        tables.append(make_score_table("test", "calibration_score", cal_cells))
    save_score_tables_csv(tables_path, tables, _annotations(cfg))
    text_path.write_text("\n\n".join(t.to_text() for t in tables) + "\n")
    _update_manifest(
        out, cfg, "report", ["score_tables.csv", "report.txt"]
    )
    return {"score_tables": tables_path, "text": text_path, "tables": tables}


_STAGES = {
    "synth": run_synth,
    "decompose": run_decompose,
    "train": run_train,
    "tune": run_tune,
    "evaluate": run_evaluate,
    "calibrate": run_calibrate,
    "orbit": run_orbit,
    "report": run_report,
}


# ------------------------------------------------------------ entrypoint


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermorom",
        description="Probabilistic reduced-order density modeling pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _STAGES.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0].rstrip("."))
        p.add_argument("--config", type=Path, default=None, help="JSON run config")
        p.add_argument("--out", type=Path, default=Path("run"), help="run directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--loss", choices=("mse", "nlpd", "crps"), default=None)
        p.add_argument("--inputs", choices=("jb", "jbh", "jbh0"), default=None)
        p.add_argument("--k", type=int, default=None, help="MC draws at evaluation")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--random", type=int, default=None)
        p.add_argument("--overwrite", action="store_true")
    return parser


def _flag_overrides(args: argparse.Namespace) -> dict:
    pairs = (
        ("run", "seed", args.seed),
        ("run", "workers", args.workers),
        ("train", "loss", args.loss),
        ("features", "set_id", args.inputs),
        ("eval", "k", args.k),
        ("tuner", "trials", args.trials),
        ("tuner", "random", args.random),
    )
    overrides: dict = {}
    for section, key, value in pairs:
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    return overrides


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        with open(args.config) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
    else:
        data = {}
    data = apply_env_overrides(data)
    for section, values in _flag_overrides(args).items():
        data.setdefault(section, {}).update(values)
    return RunConfig.from_dict(data)


def _fail(category: str, detail, code: int) -> int:
    print(f"error {category}: {' '.join(str(detail).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        try:
            cfg = load_config(args)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        args.out.mkdir(parents=True, exist_ok=True)
        _STAGES[args.command](cfg, args.out, overwrite=args.overwrite)
    except CliError as exc:
        return _fail(exc.category, exc.detail, 2)
    except ConfigError as exc:
        return _fail("config", exc, 2)
    except (StorageError, OSError) as exc:
        return _fail("io", exc, 3)
    except (GapError, AltitudeRangeError, ValueError, KeyError) as exc:
        return _fail("data", exc, 4)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        return _fail("runtime", exc, 5)
    return 0


if __name__ == "__main__":
    sys.exit(main())
