"""Command-line entry point: synth, preprocess, train, infer, evaluate, report."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from cascadeseg import io as dio
from cascadeseg.config import ConfigError, TrainConfig, apply_overrides, load_config, parse_override

log = logging.getLogger("cascadeseg")


class CliError(RuntimeError):
    pass


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _require_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"directory not found: {p}")
    return p


# -- synth -------------------------------------------------------------------


def case_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _synth_one(job: tuple) -> str:
    from cascadeseg.synthetic import BiasFieldSpec, PhantomParams, generate_case

    out, index, seed, size, amplitude, degree, noise = job
    cseed = case_seed(seed, index)
    bias = BiasFieldSpec.random(degree, amplitude, np.random.default_rng(cseed)) if amplitude > 0 else None
    params = PhantomParams(
        volume_shape=(size, size, size), noise_sigma=noise, bias=bias, seed=cseed, case_id=f"phantom_{index:03d}"
    )
    stack, labels = generate_case(params)
    dio.save_case(out, stack, labels)
    return stack.case_id


def cmd_synth(args: argparse.Namespace) -> None:
    if args.cases < 1:
        raise CliError("--cases must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(out, i, args.seed, args.size, args.bias_amplitude, args.bias_degree, args.noise_sigma) for i in range(args.cases)]
    for case_id in _map(_synth_one, jobs, args.workers):
        log.info("wrote %s", case_id)


# -- preprocess --------------------------------------------------------------


def _preprocess_one(job: tuple) -> str:
    from cascadeseg.preprocessing import preprocess_case

    src, dst, case_id, degree, iterations, external = job
    stack, labels = dio.load_case(src, case_id)
    dio.save_case(dst, preprocess_case(stack, degree, iterations, external), labels)
    return case_id


def cmd_preprocess(args: argparse.Namespace) -> None:
    src = _require_dir(args.input)
    cases = dio.list_cases(src)
    if not cases:
        raise CliError(f"no cases found under {src}")
    jobs = [(src, Path(args.out), c, args.bias_degree, args.bias_iterations, args.external_bias_cmd) for c in cases]
    for case_id in _map(_preprocess_one, jobs, args.workers):
        log.info("preprocessed %s", case_id)


# -- train -------------------------------------------------------------------


def _train_config(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = [parse_override(item) for item in args.set or ()]
    if args.epochs is not None:
        overrides.append(("train", "epochs", str(args.epochs)))
    if args.seed is not None:
        overrides.append(("train", "seed", str(args.seed)))
    if args.patch_size is not None:
        overrides.append(("train", "patch_size", str(args.patch_size)))
    return apply_overrides(cfg, overrides)


def cmd_train(args: argparse.Namespace) -> None:
    from cascadeseg.training import train_run

    cfg = _train_config(args)
    data_dir = _require_dir(args.data)
    dataset = list(dio.iter_dataset(data_dir))
    if not dataset:
        raise CliError(f"no cases found under {data_dir}")
    train_run(cfg, dataset, args.out, resume=args.resume)


# -- infer -------------------------------------------------------------------


def cmd_infer(args: argparse.Namespace) -> None:
    from cascadeseg.cascade import default_device
    from cascadeseg.config import InferenceConfig, TrainConfig
    from cascadeseg.inference import predict_case
    from cascadeseg.training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model().to(default_device())
    inf = TrainConfig.from_dict(ckpt.train_config).inference if ckpt.train_config else InferenceConfig()
    overrides = []
    if args.patch_size is not None:
        overrides.append(("inference", "patch_size", str(args.patch_size)))
    if args.stride is not None:
        overrides.append(("inference", "stride", str(args.stride)))
    if args.threshold is not None:
        overrides.append(("inference", "thresholds", str(args.threshold)))
    if args.no_support_mask:
        overrides.append(("inference", "restrict_to_support", "false"))
    if overrides:
        inf = apply_overrides(TrainConfig(inference=inf), overrides).inference

    data_dir = _require_dir(args.data)
    out = Path(args.out)
    cases = dio.list_cases(data_dir)
    if not cases:
        raise CliError(f"no cases found under {data_dir}")
    for case_id in cases:
        stack, _ = dio.load_case(data_dir, case_id, with_labels=False)
        pred = predict_case(model, stack, inf)
        dio.write_nifti(out / case_id / f"{case_id}_pred.nii.gz", pred.labels.labels, stack.spacing)
        if args.save_probs:
            for name, prob in zip(("wt", "tc", "et"), pred.probabilities):
                dio.write_nifti(out / case_id / f"{case_id}_prob_{name}.nii.gz", prob.astype(np.float32), stack.spacing)
        log.info("predicted %s", case_id)


# -- evaluate / report -------------------------------------------------------


def _evaluate_one(job: tuple) -> list:
    from cascadeseg.core_types import LabelMap
    from cascadeseg.metrics import evaluate_case

    pred_path, truth_path, case_id, percentile = job
    pred, _ = dio.read_nifti(pred_path)
    truth, spacing = dio.read_nifti(truth_path)
    return evaluate_case(
        LabelMap(pred.astype(np.uint8), spacing), LabelMap(truth.astype(np.uint8), spacing), spacing, case_id, percentile
    )


def cmd_evaluate(args: argparse.Namespace) -> None:
    from cascadeseg.metrics import write_records_csv

    pred_dir, truth_dir = _require_dir(args.pred), _require_dir(args.truth)
    cases = dio.list_cases(truth_dir)
    if not cases:
        raise CliError(f"no cases found under {truth_dir}")
    jobs = []
    for case_id in cases:
        truth = dio.case_file(truth_dir, case_id, "seg")
        if not truth.exists():
            raise CliError(f"missing ground truth {truth}")
        pred = dio.find_prediction(pred_dir, case_id)
        if pred is None:
            raise CliError(f"no prediction for case {case_id} under {pred_dir}")
        jobs.append((pred, truth, case_id, args.hausdorff_percentile))
    records = [r for recs in _map(_evaluate_one, jobs, args.workers) for r in recs]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_records_csv(args.out, records)


def cmd_report(args: argparse.Namespace) -> None:
    from cascadeseg.metrics import read_records_csv, summarize, write_summary_csv

    path = Path(args.metrics)
    if not path.exists():
        raise CliError(f"metrics file not found: {path}")
    records = read_records_csv(path)
    if not records:
        raise CliError(f"{path} holds no records")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_summary_csv(args.out, summarize(records), dataset=args.dataset)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascadeseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate phantom cases")
    p.add_argument("--cases", type=int, required=True)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias-amplitude", type=float, default=0.2)
    p.add_argument("--bias-degree", type=int, default=2)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="bias-correct and normalize a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bias-degree", type=int, default=3)
    p.add_argument("--bias-iterations", type=int, default=5)
    p.add_argument("--external-bias-cmd", default=None, help="command template with {input} and {output}")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a cascade")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict label maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--save-probs", action="store_true")
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--no-support-mask", action="store_true", help="also predict where every modality is zero")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="per-case metrics CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hausdorff-percentile", type=float, default=100.0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="boxplot summary CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default="validation")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        args.func(args)
    except (CliError, ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"cascadeseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
