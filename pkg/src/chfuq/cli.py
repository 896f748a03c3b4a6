"""Command-line interface: preprocess, train, calibrate, evaluate, simulate-coverage, synth.

Each run reads a flat ``key = value`` config file, applies the
``CHFUQ_SEED`` / ``CHFUQ_OUTPUT_DIR`` environment overrides and then the
command-line flags, and writes fixed-name outputs to the output directory.
Exit codes: 0 success, 1 numerical or training failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import data as D
from . import estimators as es
from . import stats
from . import uq
from .optim import NoCoverageFeasibleModel

log = logging.getLogger("chfuq")

METHODS = ("baseline", "cp-vanilla", "cp-adaptive", "hr", "hr-mtl", "hr-tl",
           "qd", "qd-mtl", "qd-tl", "bhr", "bhr-mtl")
COMMANDS = ("preprocess", "train", "calibrate", "evaluate", "simulate-coverage", "synth")
ENV_SEED = "CHFUQ_SEED"
ENV_OUTPUT_DIR = "CHFUQ_OUTPUT_DIR"

# output file names
CONFIG_FILE = "config.cfg"
PROCESSED_FILE = "processed.csv"
SCALER_FILE = "scaler.json"
REMOVAL_FILE = "removal_report.json"
MODEL_FILE = "model.ckpt"
SIGMA_MODEL_FILE = "sigma_model.ckpt"
CALIBRATION_FILE = "calibration.json"
TRACE_FILE = "trace.csv"
PREDICTIONS_FILE = "predictions.csv"
REPORT_FILE = "report.csv"
REPORT_TEXT_FILE = "report.txt"
REGIMES_FILE = "regimes.csv"
COVERAGE_FILE = "coverage.csv"
COVERAGE_SUMMARY_FILE = "coverage_summary.json"
LOG_FILE = "run.log"

QD_SATURATION = 30.0


class UsageError(ValueError):
    """Bad configuration or missing input; exit code 2."""


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_list(text: str) -> tuple[str, ...]:
    text = str(text).strip()
    if text.lower() in ("", "none"):
        return ()
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in _str_list(text))


ALL = frozenset(METHODS)
HR = frozenset({"hr", "hr-mtl", "hr-tl"})
QD = frozenset({"qd", "qd-mtl", "qd-tl"})
BHR = frozenset({"bhr", "bhr-mtl"})
CP = frozenset({"cp-vanilla", "cp-adaptive"})
MTL = frozenset({"hr-mtl", "qd-mtl", "bhr-mtl"})
TL = frozenset({"hr-tl", "qd-tl"})

# key -> (parser, default, methods that accept it)
KEYS = {
    "method": (str, "baseline", ALL),
    "seed": (int, 0, ALL),
    "output_dir": (str, "runs/default", ALL),
    "alpha": (float, 0.05, ALL),
    # data
    "input": (str, "", ALL),
    "data": (str, "", ALL),
    "schema": (str, "", ALL),
    "excluded_sources": (_str_list, D.DEFAULT_EXCLUDED_SOURCES, ALL),
    "split_fractions": (_float_list, (0.8, 0.1, 0.1), ALL),
    "calibration_size": (int, uq.DEFAULT_CALIBRATION_SIZE, ALL),
    # network
    "width": (int, 64, ALL),
    "depth": (int, 8, ALL),
    "head_width": (int, 32, MTL),
    "head_depth": (int, 0, MTL),
    "softplus_beta": (float, 1.0, ALL),
    # training
    "optimizer": (str, "adam", ALL),
    "learning_rate": (float, 1e-3, ALL),
    "weight_decay": (float, 0.0, ALL),
    "batch_size": (int, 512, ALL),
    "max_epochs": (int, 1500, ALL),
    "patience": (int, 100, ALL),
    "coverage_gate": (_bool, None, HR | QD),
    # method-specific losses
    "loss": (str, "rmspe", CP | {"baseline"}),
    "gamma": (float, 0.5, HR | QD | BHR),
    "lam": (float, 0.1, QD),
    "softness": (float, 200.0, QD),
    "beta_kl": (float, 1.0, BHR),
    "prior_sigma": (float, 1.0, BHR),
    "mc_samples": (int, 1, BHR),
    "n_samples": (int, 20, BHR),
    "pretrained": (str, "", TL),
    "freeze": (str, "none", TL),
    "sigma_width": (int, 32, {"cp-adaptive"}),
    "sigma_depth": (int, 4, {"cp-adaptive"}),
    # coverage simulation
    "trials": (int, 10000, ALL),
    "m": (int, 100, ALL),
    "generator": (str, "data", ALL),
    "test_size": (int, 20000, ALL),
    # synthetic data
    "n": (int, 5000, ALL),
}


@dataclass
class RunConfig:
    """Explicitly set keys (as strings) plus typed lookup with defaults."""

    command: str
    explicit: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for key, text in self.explicit.items():
            if key not in KEYS:
                raise UsageError(f"unknown config key {key!r}")
            try:
                KEYS[key][0](text)
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        method = self.method
        if method not in METHODS:
            raise UsageError(f"method must be one of {', '.join(METHODS)}; got {method!r}")
        bad = sorted(k for k in self.explicit if method not in KEYS[k][2])
        if bad:
            raise UsageError(f"key(s) {', '.join(bad)} do not apply to method {method!r}")

    def __getitem__(self, key):
        parse, default, _ = KEYS[key]
        if key in self.explicit:
            return parse(self.explicit[key])
        return default

    def get(self, key, fallback=None):
        value = self[key]
        return fallback if value is None else value

    @property
    def method(self) -> str:
        return self.explicit.get("method", KEYS["method"][1])

    @property
    def output_dir(self) -> Path:
        return Path(self["output_dir"])

    def serialize(self) -> str:
        lines = [f"# chfuq {self.command}"]
        lines += [f"{k} = {self.explicit[k]}" for k in sorted(self.explicit)]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, command: str, text: str) -> "RunConfig":
        return cls(command, parse_config_text(text))


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# shared helpers


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_json(path: Path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _schema_mapping(text: str) -> dict[str, str] | None:
    if not text:
        return None
    mapping = {}
    for part in text.split(","):
        if ":" not in part:
            raise UsageError(f"schema entries look like role:column, got {part!r}")
        role, col = (s.strip() for s in part.split(":", 1))
        mapping[role] = col
    return mapping


def _processed_path(cfg: RunConfig) -> Path:
    return Path(cfg["data"]) if cfg["data"] else cfg.output_dir / PROCESSED_FILE


def _load_processed(cfg: RunConfig):
    path = _processed_path(cfg)
    if not path.exists():
        raise FileNotFoundError(f"processed table not found: {path} (run preprocess first)")
    table = pd.read_csv(path, keep_default_na=False)
    scaler_path = path.parent / SCALER_FILE
    if not scaler_path.exists():
        raise FileNotFoundError(f"scaler state not found: {scaler_path}")
    return table, D.ScalerState.load(scaler_path)


def _features(table, scaler) -> np.ndarray:
    return D.apply_scaler(table, scaler)


def _mask(table, split: str) -> np.ndarray:
    return (table["split"] == split).to_numpy()


def _calib(table) -> np.ndarray:
    return table["calibration"].astype(str).str.lower().eq("true").to_numpy()


def _common(cfg: RunConfig) -> dict:
    return dict(width=cfg["width"], depth=cfg["depth"], softplus_beta=cfg["softplus_beta"],
                optimizer=cfg["optimizer"], learning_rate=cfg["learning_rate"],
                weight_decay=cfg["weight_decay"], batch_size=cfg["batch_size"],
                max_epochs=cfg["max_epochs"], patience=cfg["patience"], alpha=cfg["alpha"],
                standardize=False, random_state=cfg["seed"])


def build_estimator(cfg: RunConfig):
    """Point/interval estimator for the configured method (CP returns its base model)."""
    method = cfg.method
    kw = _common(cfg)
    if method in MTL:
        kw.update(mtl=True, head_width=cfg["head_width"], head_depth=cfg["head_depth"])
    if method == "baseline" or method in CP:
        return es.ResNetRegressor(loss=cfg["loss"], **kw)
    if method in TL:
        if not cfg["pretrained"]:
            raise UsageError(f"method {method!r} needs a pretrained baseline checkpoint (pretrained = PATH)")
        if not Path(cfg["pretrained"]).exists():
            raise FileNotFoundError(f"pretrained checkpoint not found: {cfg['pretrained']}")
        kw.update(pretrained=cfg["pretrained"], freeze=cfg["freeze"])
    if method in HR:
        return es.HeteroscedasticRegressor(gamma=cfg["gamma"],
                                           coverage_gate=cfg.get("coverage_gate", False), **kw)
    if method in QD:
        return es.QualityDrivenRegressor(lam=cfg["lam"], softness=cfg["softness"],
                                         gamma=cfg["gamma"],
                                         coverage_gate=cfg.get("coverage_gate", True), **kw)
    return es.BayesianHeteroscedasticRegressor(
        beta_kl=cfg["beta_kl"], prior_sigma=cfg["prior_sigma"], gamma=cfg["gamma"],
        mc_samples=cfg["mc_samples"], n_samples=cfg["n_samples"], **kw)


def _sigma_estimator(cfg: RunConfig):
    kw = _common(cfg)
    kw.update(width=cfg["sigma_width"], depth=cfg["sigma_depth"])
    return es.default_sigma_estimator(**kw)


def _load_model(cfg: RunConfig):
    path = cfg.output_dir / MODEL_FILE
    if not path.exists():
        raise FileNotFoundError(f"model checkpoint not found: {path} (run train first)")
    return es._NetworkRegressor.load(path)


def _load_conformal(cfg: RunConfig) -> es.ConformalRegressor:
    path = cfg.output_dir / CALIBRATION_FILE
    if not path.exists():
        raise FileNotFoundError(f"calibration not found: {path} (run calibrate first)")
    stored = json.loads(path.read_text())
    model = es.ConformalRegressor(method=stored["kind"], alpha=stored["alpha"])
    model.estimator_ = _load_model(cfg)
    if stored["kind"] == "adaptive":
        model.sigma_estimator_ = es._NetworkRegressor.load(cfg.output_dir / SIGMA_MODEL_FILE)
    model.scores_ = np.asarray(stored["scores"], dtype=np.float64)
    model.calibration_ = uq.CalibrationResult.from_dict(stored)
    return model


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(cfg: RunConfig) -> int:
    if not cfg["input"]:
        raise UsageError("preprocess needs an input CSV (input = PATH)")
    path = Path(cfg["input"])
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    table = D.load_csv(path, _schema_mapping(cfg["schema"]))
    log.info("loaded %d rows from %s", len(table), path)
    filtered, report = D.filter_dataset(table, cfg["excluded_sources"])
    split = D.SplitSpec(fractions=cfg["split_fractions"], seed=cfg["seed"])
    labels = D.split_labels(filtered, split)
    out = filtered.copy()
    out["split"] = labels
    calib = np.zeros(len(out), dtype=bool)
    train_idx = np.flatnonzero(labels == "train")
    size = min(cfg["calibration_size"], len(train_idx))
    calib[train_idx[D.calibration_mask(len(train_idx), size, cfg["seed"])]] = True
    out["calibration"] = calib
    scaler = D.fit_scaler(out.loc[labels == "train"])
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out.to_csv(cfg.output_dir / PROCESSED_FILE, index=False, lineterminator="\n",
               float_format=None)
    scaler.save(cfg.output_dir / SCALER_FILE)
    _write_json(cfg.output_dir / REMOVAL_FILE, report.to_dict())
    print(f"{report.retained} rows retained of {report.initial} "
          f"(removed: subcooling {report.subcooling}, sources {report.sources})")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    table, scaler = _load_processed(cfg)
    X = _features(table, scaler)
    y = table["chf"].to_numpy(dtype=np.float64)
    train = _mask(table, "train")
    if cfg.method in CP:
        train &= ~_calib(table)
    val = _mask(table, "val")
    if not val.any():
        raise UsageError("the processed table has no validation rows")
    model = build_estimator(cfg)
    model.fit(X[train], y[train], eval_set=(X[val], y[val]))
    model.save(cfg.output_dir / MODEL_FILE)
    model.trace_.to_csv(cfg.output_dir / TRACE_FILE)
    log.info("trained %s: best epoch %s, stop %s", cfg.method, model.trace_.best_epoch,
             model.trace_.stop_reason)
    if cfg.method in QD:
        b = model.predict_bundle(X[train])
        scaled_width = np.median(np.abs(b.upper - b.lower) / model.y_scale_)
        if cfg["softness"] * scaled_width > QD_SATURATION:
            msg = (f"softness x median width = {cfg['softness'] * scaled_width:.1f} exceeds "
                   f"{QD_SATURATION:g}; the soft coverage indicator is saturated")
            warnings.warn(msg)
            log.warning(msg)
    if cfg.method == "cp-adaptive":
        residuals = np.abs(y[train] - model.predict(X[train]))
        sigma_model = _sigma_estimator(cfg)
        sigma_model.fit(X[train], residuals,
                        eval_set=(X[val], np.abs(y[val] - model.predict(X[val]))))
        sigma_model.save(cfg.output_dir / SIGMA_MODEL_FILE)
    print(f"trained {cfg.method}: best epoch {model.trace_.best_epoch} "
          f"of {model.trace_.epochs} ({model.trace_.stop_reason})")
    return 0


def cmd_calibrate(cfg: RunConfig) -> int:
    if cfg.method not in CP:
        raise UsageError(f"calibrate applies to cp-vanilla/cp-adaptive, not {cfg.method!r}")
    table, scaler = _load_processed(cfg)
    X = _features(table, scaler)
    y = table["chf"].to_numpy(dtype=np.float64)
    cal = _calib(table)
    if not cal.any():
        raise UsageError("the processed table has no calibration rows")
    kind = cfg.method.split("-", 1)[1]
    sigma_model = None
    if kind == "adaptive":
        sigma_path = cfg.output_dir / SIGMA_MODEL_FILE
        if not sigma_path.exists():
            raise FileNotFoundError(f"sigma model not found: {sigma_path}")
        sigma_model = es._NetworkRegressor.load(sigma_path)
    model = es.ConformalRegressor(estimator=_load_model(cfg), method=kind,
                                  sigma_estimator=sigma_model, alpha=cfg["alpha"])
    model.calibrate(X[cal], y[cal])
    result = model.calibration_
    if result.infinite:
        msg = (f"calibration size {result.m} is too small for alpha={result.alpha}: "
               "intervals are infinite")
        warnings.warn(msg)
        log.warning(msg)
    stored = result.to_dict()
    stored["scores"] = [float(v) for v in model.scores_]
    _write_json(cfg.output_dir / CALIBRATION_FILE, stored)
    print(f"{kind} quantile {result.quantile!r} (m={result.m}, alpha={result.alpha})")
    return 0


def _predict(cfg: RunConfig, X):
    if cfg.method in CP:
        model = _load_conformal(cfg)
        return model.predict_bundle(X), model.interval_function(X)
    model = _load_model(cfg)
    return model.predict_bundle(X), None


def cmd_evaluate(cfg: RunConfig) -> int:
    table, scaler = _load_processed(cfg)
    X = _features(table, scaler)
    y = table["chf"].to_numpy(dtype=np.float64)
    quality = table["X"].to_numpy(dtype=np.float64)
    bundle, interval_fn = _predict(cfg, X)
    raw_features = D.model_inputs(table, scaler.features)

    reports = []
    for subset, mask in (("test", _mask(table, "test")), ("full", np.ones(len(y), dtype=bool))):
        if not mask.any():
            continue
        sub_fn = None
        if interval_fn is not None:
            def sub_fn(p, mask=mask):
                lo, hi = interval_fn(p)
                return lo[mask], hi[mask]
        reports.append(stats.evaluate_predictions(
            bundle.mu[mask], y[mask],
            lower=None if bundle.lower is None else bundle.lower[mask],
            upper=None if bundle.upper is None else bundle.upper[mask],
            sigma=None if cfg.method in CP or bundle.sigma is None else bundle.sigma[mask],
            quality=quality[mask], features=raw_features[mask],
            reliable=None if bundle.reliable is None else bundle.reliable[mask],
            subset=subset, interval_fn=sub_fn, alpha=cfg["alpha"],
        ))

    out = cfg.output_dir
    header = ["row_id", "split", "y", "mu", "lower", "upper", "sigma", "reliable",
              "sigma_model2", "sigma_data2", "sigma_pred2"]

    def col(a, i):
        return None if a is None else a[i]

    _write_csv(out / PREDICTIONS_FILE, header, (
        [table["row_id"].iat[i], table["split"].iat[i], y[i], bundle.mu[i],
         col(bundle.lower, i), col(bundle.upper, i), col(bundle.sigma, i),
         col(bundle.reliable, i), col(bundle.sigma_model2, i), col(bundle.sigma_data2, i),
         col(bundle.sigma_pred2, i)]
        for i in range(len(y))
    ))
    rows = [r.row() for r in reports]
    _write_csv(out / REPORT_FILE, list(rows[0]), ([r[k] for k in rows[0]] for r in rows))
    _write_csv(out / REGIMES_FILE, ["subset", "band", "count", "mean", "std", "max"], (
        [r.subset, b.band, b.count, b.mean, b.std, b.max] for r in reports for b in r.regimes
    ))
    text = "".join(r.to_text() for r in reports)
    (out / REPORT_TEXT_FILE).write_text(text)
    print(text, end="")
    return 0


def _synth_xy(scaler: D.ScalerState):
    def generator(n, rng):
        table = D.synth_generate(n, seed=int(rng.integers(2 ** 63)))
        return D.apply_scaler(table, scaler), table["chf"].to_numpy()
    return generator


def cmd_simulate_coverage(cfg: RunConfig) -> int:
    trials, m = cfg["trials"], cfg["m"]
    if trials < 100:
        raise UsageError(f"trials must be >= 100, got {trials}")
    table, scaler = _load_processed(cfg)
    model = _load_model(cfg)
    if cfg["generator"] == "synth":
        generator = _synth_xy(scaler)
        test_data = None
    elif cfg["generator"] == "data":
        X = _features(table, scaler)
        y = table["chf"].to_numpy(dtype=np.float64)
        pool = np.flatnonzero(_mask(table, "val") | _calib(table))
        if m > len(pool):
            raise UsageError(f"m={m} exceeds the {len(pool)} held-out rows available")
        test = _mask(table, "test")
        test_data = (X[test], y[test])

        def generator(n, rng):
            idx = rng.choice(pool, size=n, replace=False)
            return X[idx], y[idx]
    else:
        raise UsageError("generator must be 'data' or 'synth'")
    sim = uq.coverage_simulation(generator, model, m, cfg["alpha"], trials, seed=cfg["seed"],
                                 test_size=cfg["test_size"], test_data=test_data)
    _write_csv(cfg.output_dir / COVERAGE_FILE, ["trial", "picp"],
               ([i, c] for i, c in enumerate(sim.coverage)))
    _write_json(cfg.output_dir / COVERAGE_SUMMARY_FILE, sim.summary())
    print(f"KS distance to Beta({sim.law.a},{sim.law.b}) = {sim.ks_distance:.4f}; "
          f"mean coverage {sim.mean:.4f}")
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    table = D.synth_generate(cfg["n"], seed=cfg["seed"])
    path = Path(cfg["input"]) if cfg["input"] else out / "synthetic.csv"
    table.drop(columns=["row_id"]).to_csv(path, index=False, lineterminator="\n")
    print(f"wrote {len(table)} synthetic rows to {path}")
    return 0


HANDLERS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "simulate-coverage": cmd_simulate_coverage,
    "synth": cmd_synth,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chfuq", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seed", type=int)
    p.add_argument("--input", help="input CSV (preprocess) or output CSV (synth)")
    p.add_argument("--data", help="processed table (default: OUTPUT_DIR/processed.csv)")
    p.add_argument("--output-dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args, environ=os.environ) -> RunConfig:
    explicit = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        explicit.update(parse_config_text(path.read_text()))
    if environ.get(ENV_SEED):
        explicit["seed"] = environ[ENV_SEED]
    if environ.get(ENV_OUTPUT_DIR):
        explicit["output_dir"] = environ[ENV_OUTPUT_DIR]
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        explicit[key] = value
    for key in ("method", "seed", "input", "data", "output_dir"):
        value = getattr(args, key)
        if value is not None:
            explicit[key] = str(value)
    return RunConfig(args.command, explicit)


def _setup_logging(out: Path, verbose: bool):
    out.mkdir(parents=True, exist_ok=True)
    log.setLevel(logging.DEBUG)
    log.handlers.clear()
    fh = logging.FileHandler(out / LOG_FILE)
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(fh)
    if verbose:
        sh = logging.StreamHandler(sys.stderr)
        sh.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(sh)
    return fh


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handler = _setup_logging(cfg.output_dir, args.verbose)
    try:
        (cfg.output_dir / CONFIG_FILE).write_text(cfg.serialize())
        log.info("command %s, method %s", cfg.command, cfg.method)
        return HANDLERS[cfg.command](cfg)
    except NoCoverageFeasibleModel as exc:
        log.error("coverage gate: %s", exc)
        print(f"error: coverage gate failed: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        log.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
