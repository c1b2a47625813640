"""Command-line front end: train / evaluate / certify / sweep / partition-report.

Every run writes a self-describing directory: the effective configuration
(defaults applied, flags folded in) is persisted as ``config.json`` and
replaying it reproduces every artifact byte for byte. Randomness derives
from the mandatory seed through fixed stream ids, JSON is always written
with sorted keys, and no timestamps enter any artifact.

Run-directory layout (mechanism-dependent subsets):

    config.json         effective experiment spec
    model.json          final model checkpoint
    cert_model.json     broadcast model the certificate conditions on
    training_log.jsonl  one round record per line (full vectors on SGD rounds)
    ledger.json         privacy accounting
    certificate.json    fairness certificate
    metrics.json        test/train utility and fairness gaps
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import certify, fairfm, metrics
from .data import DatasetSchema, load_csv, partition_by_group, subsample_major, train_test_split
from .errors import FairdpError, InvalidParameterError
from .linalg import RngStream
from .model import ModelParams, forward_penultimate, load_checkpoint, save_checkpoint
from .privacy import calibrate_sigma
from .training import RoundRecord, TrainConfig, TrainResult, train, train_dpsgd_baseline

MECHANISMS = ("fairdp", "dpsgd", "fairfm", "fairfm-smooth", "dpsgd-smooth")

STREAM_SPLIT = 30
STREAM_RHO = 31
STREAM_SMOOTH = 32
STREAM_TRAIN = 33

_DEFAULTS = {
    "mechanism": "fairdp",
    "q": 0.02,
    "steps": 150,
    "sigma": None,
    "epsilon": None,
    "clip_c": 1.0,
    "clip_m": 0.5,
    "delta": 1e-5,
    "eta_adam": 0.02,
    "eta_sgd": 0.005,
    "switch_fraction": 0.9,
    "hidden_dims": [32],
    "threshold": 0.5,
    "rho": None,
    "event": "demographic-parity",
    "test_fraction": 0.2,
    "smooth_sigma": 0.1,
    "smooth_samples": 200,
    "fm_eta": 0.01,
    "fm_steps": 500,
    "metrics": list(metrics.METRIC_NAMES),
}


@dataclass
class ExperimentSpec:
    """Fully-resolved description of one experiment."""

    dataset: str
    schema: DatasetSchema
    seed: int
    out: str
    mechanism: str = "fairdp"
    q: float = 0.02
    steps: int = 150
    sigma: float | None = None
    epsilon: float | None = None
    clip_c: float = 1.0
    clip_m: float | None = 0.5
    delta: float = 1e-5
    eta_adam: float = 0.02
    eta_sgd: float = 0.005
    switch_fraction: float = 0.9
    hidden_dims: tuple[int, ...] = (32,)
    threshold: float = 0.5
    rho: float | None = None
    event: str = "demographic-parity"
    test_fraction: float = 0.2
    smooth_sigma: float = 0.1
    smooth_samples: int = 200
    fm_eta: float = 0.01
    fm_steps: int = 500
    metrics: tuple[str, ...] = metrics.METRIC_NAMES
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise InvalidParameterError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        if self.seed is None:
            raise InvalidParameterError("a seed is mandatory")
        if self.mechanism in ("fairfm", "fairfm-smooth") and self.epsilon is None:
            raise InvalidParameterError(f"mechanism {self.mechanism} needs --epsilon (pure-DP budget)")
        if self.mechanism in ("fairdp", "dpsgd", "dpsgd-smooth"):
            if self.sigma is None and self.epsilon is None:
                raise InvalidParameterError(f"mechanism {self.mechanism} needs --sigma or --epsilon")
        if self.event not in certify.EVENT_NAMES:
            raise InvalidParameterError(f"unknown event {self.event!r}; expected one of {certify.EVENT_NAMES}")

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "schema": self.schema.to_dict(),
            "seed": self.seed,
            "out": self.out,
            "mechanism": self.mechanism,
            "q": self.q,
            "steps": self.steps,
            "sigma": self.sigma,
            "epsilon": self.epsilon,
            "clip_c": self.clip_c,
            "clip_m": self.clip_m,
            "delta": self.delta,
            "eta_adam": self.eta_adam,
            "eta_sgd": self.eta_sgd,
            "switch_fraction": self.switch_fraction,
            "hidden_dims": list(self.hidden_dims),
            "threshold": self.threshold,
            "rho": self.rho,
            "event": self.event,
            "test_fraction": self.test_fraction,
            "smooth_sigma": self.smooth_sigma,
            "smooth_samples": self.smooth_samples,
            "fm_eta": self.fm_eta,
            "fm_steps": self.fm_steps,
            "metrics": list(self.metrics),
        }

    @staticmethod
    def resolve(config_path: str | None, overrides: dict) -> "ExperimentSpec":
        """Merge defaults <- config file <- CLI flags into a spec.

        Warnings (e.g. a weight bound explicitly given to a dpsgd mechanism,
        which ignores it) are attached but never persisted, so replaying a
        stored config reproduces it byte for byte.
        """
        merged: dict = dict(_DEFAULTS)
        explicit: set[str] = set()
        if config_path:
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
            loaded.pop("warnings", None)
            merged.update(loaded)
            explicit |= set(loaded)
        flag_values = {k: v for k, v in overrides.items() if v is not None}
        merged.update(flag_values)
        explicit |= set(flag_values)
        for required in ("dataset", "schema", "seed", "out"):
            if merged.get(required) is None:
                raise InvalidParameterError(f"missing required setting {required!r}")
        schema = merged["schema"]
        if isinstance(schema, dict):
            schema = DatasetSchema.from_dict(schema)
        known = {f for f in ExperimentSpec.__dataclass_fields__ if f != "warnings"}
        unknown = set(merged) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        merged["schema"] = schema
        merged["hidden_dims"] = tuple(merged["hidden_dims"])
        merged["metrics"] = tuple(merged["metrics"])
        spec = ExperimentSpec(**merged)
        if spec.mechanism in ("dpsgd", "dpsgd-smooth") and "clip_m" in explicit and merged["clip_m"] is not None:
            spec.warnings.append("weight clipping (clip_m) is ignored by the dpsgd mechanisms")
        return spec


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _nan_to_none(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def _prepare_data(spec: ExperimentSpec, root: RngStream):
    ds = load_csv(spec.dataset, spec.schema)
    train_ds, test_ds = train_test_split(ds, spec.test_fraction, root.child(STREAM_SPLIT))
    if spec.rho is not None:
        train_ds = subsample_major(train_ds, spec.rho, root.child(STREAM_RHO))
    return train_ds, test_ds


def _train_config(spec: ExperimentSpec, sigma: float) -> TrainConfig:
    weight_clip = spec.clip_m
    if spec.mechanism in ("dpsgd", "dpsgd-smooth") or weight_clip is None:
        weight_clip = math.inf
    return TrainConfig(
        q=spec.q, sigma=sigma, grad_clip=spec.clip_c, weight_clip=weight_clip,
        steps=spec.steps, seed=spec.seed, eta_adam=spec.eta_adam, eta_sgd=spec.eta_sgd,
        delta=spec.delta, switch_fraction=spec.switch_fraction,
        hidden_dims=spec.hidden_dims, threshold=spec.threshold,
    )


def _evaluate_block(spec: ExperimentSpec, model: ModelParams, ds, part, probability_fn=None) -> dict:
    result = metrics.evaluate(model, ds, part, spec.threshold, probability_fn=probability_fn)
    gaps = {name: _nan_to_none(metrics.fairness_gap(result.table, name)) for name in spec.metrics}
    doc = result.to_json()
    doc["gaps"] = gaps
    return doc


def _smooth_probability_fn(spec: ExperimentSpec, model: ModelParams, root: RngStream):
    """Vectorized smoothed inference: average forward passes under parameter noise."""
    def fn(ds):
        rng = root.child(STREAM_SMOOTH)
        flat = model.to_flat()
        acc = np.zeros(ds.n)
        for _ in range(spec.smooth_samples):
            noise = rng.generator.normal(0.0, spec.smooth_sigma, flat.size)
            noisy = ModelParams.from_flat(flat + noise, model.input_dim, model.hidden_dims)
            z_prev = forward_penultimate(noisy, ds.features)
            acc += 1.0 / (1.0 + np.exp(-(z_prev @ noisy.w_out)))
        return acc / spec.smooth_samples
    return fn


def cmd_train(spec: ExperimentSpec) -> Path:
    """Run one experiment; returns the run directory."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    root = RngStream(spec.seed)
    train_ds, test_ds = _prepare_data(spec, root)
    train_part = partition_by_group(train_ds)
    test_part = partition_by_group(test_ds)

    sigma = spec.sigma
    if spec.mechanism in ("fairdp", "dpsgd", "dpsgd-smooth") and sigma is None:
        sigma = calibrate_sigma(spec.epsilon, spec.q, spec.steps, spec.delta)

    write_json(out / "config.json", spec.to_dict())

    certificate = None
    result: TrainResult | None = None
    probability_fn = None

    if spec.mechanism in ("fairdp",):
        cfg = _train_config(spec, sigma)
        result = train(train_ds, train_part, cfg, rng=root.child(STREAM_TRAIN))
        cert_model, record = result.require_certificate_basis()
        ctx = certify.CertContext.from_round(record, cfg)
        certificate = certify.certificate_for_event_name(ctx, train_ds, train_part, spec.event, cert_model)
        save_checkpoint(cert_model, out / "cert_model.json")
    elif spec.mechanism in ("dpsgd", "dpsgd-smooth"):
        cfg = _train_config(spec, sigma)
        result = train_dpsgd_baseline(train_ds, cfg, rng=root.child(STREAM_TRAIN))
    elif spec.mechanism in ("fairfm", "fairfm-smooth"):
        model = fairfm.train_fairfm(train_ds, train_part, spec.epsilon, spec.fm_eta,
                                    spec.fm_steps, root.child(STREAM_TRAIN))

    if result is not None:
        model = result.params
        with open(out / "training_log.jsonl", "w", encoding="utf-8") as fh:
            for record in result.records:
                fh.write(json.dumps(record.to_json(full=record.mode == "sgd"), sort_keys=True))
                fh.write("\n")
        result.ledger.save(out / "ledger.json")
        achieved_epsilon = result.ledger.epsilon
    else:
        # pure-DP Laplace mechanism: budget is spent once on the coefficients,
        # groups are disjoint, so the overall loss is the per-group epsilon
        write_json(out / "ledger.json", {
            "mechanism": "laplace-objective",
            "epsilon": spec.epsilon,
            "delta": 0.0,
            "per_group_epsilon": spec.epsilon,
        })
        achieved_epsilon = spec.epsilon

    if spec.mechanism in ("fairfm-smooth", "dpsgd-smooth"):
        probability_fn = _smooth_probability_fn(spec, model, root)

    save_checkpoint(model, out / "model.json")
    if certificate is not None:
        certificate.save(out / "certificate.json")

    metrics_doc = {
        "mechanism": spec.mechanism,
        "epsilon": None if achieved_epsilon is None or math.isinf(achieved_epsilon) else achieved_epsilon,
        "sigma": sigma,
        "test": _evaluate_block(spec, model, test_ds, test_part, probability_fn),
        "train": _evaluate_block(spec, model, train_ds, train_part, probability_fn),
    }
    if certificate is not None:
        metrics_doc["tau_theoretical"] = certificate.tau_theoretical
        metrics_doc["tau_empirical"] = certificate.tau_empirical
    write_json(out / "metrics.json", metrics_doc)
    return out


def load_run_spec(run_dir) -> ExperimentSpec:
    with open(Path(run_dir) / "config.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc.pop("warnings", None)
    return ExperimentSpec.resolve(None, doc)


def cmd_certify(run_dir, dataset: str | None = None, event: str | None = None,
                out_path=None) -> Path:
    """Recompute the certificate of a finished run from its artifacts."""
    run = Path(run_dir)
    spec = load_run_spec(run)
    if dataset is not None:
        spec = replace(spec, dataset=dataset)
    if event is not None:
        spec = replace(spec, event=event)
    if spec.mechanism != "fairdp":
        raise InvalidParameterError(f"run used mechanism {spec.mechanism!r}; only fairdp emits certificates")

    root = RngStream(spec.seed)
    train_ds, _ = _prepare_data(spec, root)
    train_part = partition_by_group(train_ds)
    cert_model = load_checkpoint(run / "cert_model.json")

    last = None
    with open(run / "training_log.jsonl", encoding="utf-8") as fh:
        for line in fh:
            last = json.loads(line)
    if last is None or last.get("mode") != "sgd" or "w_prev" not in last:
        raise InvalidParameterError("run log has no fully-recorded SGD round to certify")
    record = RoundRecord.from_json(last)
    if cert_model.w_out.shape != record.w_prev.shape:
        raise InvalidParameterError("checkpoint and round record disagree on the output-layer shape")
    cfg = _train_config(spec, spec.sigma if spec.sigma is not None
                        else calibrate_sigma(spec.epsilon, spec.q, spec.steps, spec.delta))
    ctx = certify.CertContext.from_round(record, cfg)
    certificate = certify.certificate_for_event_name(ctx, train_ds, train_part, spec.event, cert_model)
    out_path = Path(out_path) if out_path else run / "certificate_recomputed.json"
    certificate.save(out_path)
    return out_path


def cmd_evaluate(run_dir, dataset: str | None = None, split: str = "test", out_path=None) -> dict:
    run = Path(run_dir)
    spec = load_run_spec(run)
    if dataset is not None:
        spec = replace(spec, dataset=dataset)
    root = RngStream(spec.seed)
    train_ds, test_ds = _prepare_data(spec, root)
    ds = {"test": test_ds, "train": train_ds}.get(split)
    if ds is None:
        raise InvalidParameterError(f"split must be 'train' or 'test', got {split!r}")
    model = load_checkpoint(run / "model.json")
    probability_fn = None
    if spec.mechanism in ("fairfm-smooth", "dpsgd-smooth"):
        probability_fn = _smooth_probability_fn(spec, model, root)
    doc = _evaluate_block(spec, model, ds, partition_by_group(ds), probability_fn)
    doc["split"] = split
    if out_path:
        write_json(out_path, doc)
    return doc


def cmd_partition_report(dataset: str, schema: DatasetSchema, out_path=None) -> dict:
    ds = load_csv(dataset, schema)
    part = partition_by_group(ds)
    part.validate(ds.n)
    doc = {
        "n": ds.n,
        "n_features": ds.n_features,
        "n_groups": ds.n_groups,
        "groups": [
            {
                "code": k,
                "name": ds.group_names[k],
                "size": int(len(part.groups[k])),
                "positive_rate": float(np.mean(ds.labels[part.groups[k]])),
            }
            for k in range(ds.n_groups)
        ],
    }
    if out_path:
        write_json(out_path, doc)
    return doc


_SWEEP_AXES = {"epsilon": "epsilon", "rho": "rho", "clip-m": "clip_m"}
_SWEEP_COLUMNS = ("axis", "value", "epsilon", "accuracy", "precision",
                  "dp_gap", "eo_gap", "odds_gap", "tau_theoretical", "tau_empirical", "error")


def cmd_sweep(spec: ExperimentSpec, axis: str, values: list[float], out_dir) -> Path:
    """One training run per grid value; partial failures become rows, not aborts."""
    if axis not in _SWEEP_AXES:
        raise InvalidParameterError(f"sweep axis must be one of {sorted(_SWEEP_AXES)}, got {axis!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        point_dir = out / f"{axis}={value:g}"
        point_spec = replace(spec, out=str(point_dir), **{_SWEEP_AXES[axis]: value})
        if axis == "epsilon":
            point_spec = replace(point_spec, sigma=None)
        row = {c: None for c in _SWEEP_COLUMNS}
        row.update({"axis": axis, "value": value})
        try:
            run = cmd_train(point_spec)
            with open(run / "metrics.json", encoding="utf-8") as fh:
                m = json.load(fh)
            gaps = m["test"]["gaps"]
            row.update({
                "epsilon": m["epsilon"],
                "accuracy": m["test"]["accuracy"],
                "precision": m["test"]["precision"],
                "dp_gap": gaps.get("demographic-parity"),
                "eo_gap": gaps.get("equal-opportunity"),
                "odds_gap": gaps.get("equal-odds"),
                "tau_theoretical": m.get("tau_theoretical"),
                "tau_empirical": m.get("tau_empirical"),
            })
        except FairdpError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(_SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join("" if row[c] is None else str(row[c]) for c in _SWEEP_COLUMNS) + "\n")
    write_json(out / "sweep.json", {"axis": axis, "rows": rows})
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--dataset", help="CSV file path")
    p.add_argument("--mechanism", choices=MECHANISMS)
    p.add_argument("--epsilon", type=float, help="target privacy budget (calibrates sigma)")
    p.add_argument("--sigma", type=float, help="noise multiplier (skips calibration)")
    p.add_argument("--clip-c", dest="clip_c", type=float, help="per-example gradient norm bound")
    p.add_argument("--clip-m", dest="clip_m", type=float, help="output-layer weight norm bound")
    p.add_argument("--steps", type=int, help="training rounds")
    p.add_argument("--q", type=float, help="Poisson sampling probability")
    p.add_argument("--delta", type=float, help="DP failure probability")
    p.add_argument("--rho", type=float, help="majority/minority imbalance ratio for the training split")
    p.add_argument("--event", help="certificate event, e.g. demographic-parity")
    p.add_argument("--seed", type=int, help="run seed (mandatory)")
    p.add_argument("--out", help="output directory")


def _overrides_from(args: argparse.Namespace) -> dict:
    keys = ("dataset", "mechanism", "epsilon", "sigma", "clip_c", "clip_m", "steps",
            "q", "delta", "rho", "event", "seed", "out")
    return {k: getattr(args, k, None) for k in keys}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairdp",
                                     description="DP training with group-fairness certificates")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one experiment")
    _add_common_flags(p_train)

    p_eval = sub.add_parser("evaluate", help="score a finished run on a data split")
    p_eval.add_argument("--run", required=True, help="run directory from `train`")
    p_eval.add_argument("--dataset", help="override the dataset path")
    p_eval.add_argument("--split", default="test", choices=("train", "test"))
    p_eval.add_argument("--out", help="write metrics JSON here instead of stdout")

    p_cert = sub.add_parser("certify", help="recompute a run's fairness certificate")
    p_cert.add_argument("--run", required=True)
    p_cert.add_argument("--dataset", help="override the dataset path")
    p_cert.add_argument("--event", help="override the certificate event")
    p_cert.add_argument("--out", help="output path for the certificate JSON")

    p_sweep = sub.add_parser("sweep", help="grid of runs along one axis")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=sorted(_SWEEP_AXES))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated grid values, e.g. 0.5,1.0,2.0")

    p_part = sub.add_parser("partition-report", help="group sizes and label rates of a dataset")
    p_part.add_argument("--config", help="JSON config providing the schema")
    p_part.add_argument("--dataset", help="CSV file path")
    p_part.add_argument("--out", help="write the report here instead of stdout")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            spec = ExperimentSpec.resolve(args.config, _overrides_from(args))
            for w in spec.warnings:
                print(f"warning: {w}", file=sys.stderr)
            run = cmd_train(spec)
            print(run)
        elif args.command == "evaluate":
            doc = cmd_evaluate(args.run, dataset=args.dataset, split=args.split,
                               out_path=args.out)
            if not args.out:
                print(json.dumps(doc, sort_keys=True, indent=2))
        elif args.command == "certify":
            path = cmd_certify(args.run, dataset=args.dataset, event=args.event,
                               out_path=args.out)
            print(path)
        elif args.command == "sweep":
            spec = ExperimentSpec.resolve(args.config, _overrides_from(args))
            values = [float(v) for v in args.values.split(",")]
            out = cmd_sweep(spec, args.axis, values, spec.out)
            print(out / "sweep.csv")
        elif args.command == "partition-report":
            merged = {}
            if args.config:
                with open(args.config, encoding="utf-8") as fh:
                    merged = json.load(fh)
            dataset = args.dataset or merged.get("dataset")
            if dataset is None or "schema" not in merged:
                raise InvalidParameterError("partition-report needs --dataset and a config with a schema")
            doc = cmd_partition_report(dataset, DatasetSchema.from_dict(merged["schema"]),
                                       out_path=args.out)
            if not args.out:
                print(json.dumps(doc, sort_keys=True, indent=2))
        return 0
    except (FairdpError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
