"""
Command line front end: ``python -m famgp <command>``.

Commands
--------
gen-data {sinusoids,correlated}
    Write a synthetic dataset CSV (and its noise-free values).
fit
    Train a model on a dataset CSV and write the model JSON and trace CSV.
predict
    Evaluate a saved model on a CSV's ``x`` column or on an even grid.
bench {scaling,rmse-samples,rmse-eigs,correlation}
    Run a benchmark suite and write its report JSON and case CSV.
serve
    Serve a saved model over HTTP.

Every command accepts ``--config <json>`` holding an ExperimentConfig; explicit
flags override its fields. Exit status is 0 on success, 1 on usage, I/O or
validation errors and 2 when training stops at the iteration limit.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from famgp.core import predict_derivative
from famgp.data import (
    gen_correlated,
    gen_sinusoids,
    load_training_data,
    read_columns,
    write_dataset_csv,
    write_predictions_csv,
    write_trace_csv,
)
from famgp.exceptions import FamgpError
from famgp.experiments import run_experiment
from famgp.kernels import kernel_of
from famgp.models import ExperimentConfig, KernelKind, MODataset, MOFittedModel
from famgp.multioutput import mo_predict
from famgp.serialization import load_model, save_model
from famgp.training import default_params, train, train_fast_path, train_multioutput
from famgp.utils import configure_logging, logger

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class UsageError(Exception):
    """Malformed command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _update(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _update(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[str], overrides: Dict[str, Any]) -> ExperimentConfig:
    """
    ExperimentConfig from a JSON file (or the defaults) with ``overrides`` applied.

    ``overrides`` is a nested dict; entries whose value is None are ignored.

    Raises
    ------
    pydantic.ValidationError
        If the merged document does not validate.
    """
    document = {}
    if path:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExperimentConfig.model_validate(_update(document, _prune(overrides)))


def _prune(overrides: Dict[str, Any]) -> Dict[str, Any]:
    pruned = {}
    for key, value in overrides.items():
        if isinstance(value, dict):
            value = _prune(value)
            if value:
                pruned[key] = value
        elif value is not None:
            pruned[key] = value
    return pruned


def _common_overrides(args) -> Dict[str, Any]:
    seed = args.seed
    return {
        "seed": seed,
        "out_dir": args.out_dir,
        "dataset": {"seed": seed},
        "optimizer": {"seed": seed},
    }


def _parse_assignments(pairs: Optional[Sequence[str]]) -> Optional[Dict[str, float]]:
    if not pairs:
        return None
    values = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--param expects name=value, got '{pair}'")
        try:
            values[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"--param '{name.strip()}' has non-numeric value '{value}'")
    return values


def _out_path(config: ExperimentConfig, explicit: Optional[str], default_name: str) -> Path:
    return Path(explicit) if explicit else Path(config.out_dir) / default_name


def cmd_gen_data(args) -> int:
    overrides = _common_overrides(args)
    overrides["dataset"].update(
        {
            "generator": args.generator,
            "n_samples": args.n_samples,
            "x_range": args.x_range,
            "num_terms": args.num_terms,
            "noise_sd": args.noise_sd,
            "l_se": args.l_se,
            "noise_var": args.noise_var,
        }
    )
    if args.off_diagonal is not None:
        overrides["dataset"]["K_f"] = [[1.0, args.off_diagonal], [args.off_diagonal, 1.0]]
    config = load_config(args.config, overrides)
    spec = config.dataset
    output = _out_path(config, args.output, f"{args.generator}.csv")
    truth_path = output.with_name(f"{output.stem}_truth.csv")
    if args.generator == "sinusoids":
        data = gen_sinusoids(spec.seed, spec.n_samples, spec.x_range, spec.num_terms, spec.coeff_range, spec.noise_sd)
        X = data.dataset.X
        write_dataset_csv(output, X, data.dataset.Y)
        write_dataset_csv(truth_path, X, data.truth(X, args.derivative))
    else:
        data = gen_correlated(spec.seed, spec.n_samples, spec.l_se, spec.K_f, spec.noise_var)
        write_dataset_csv(output, data.dataset.X, data.dataset.Y)
        write_dataset_csv(truth_path, data.dataset.X, data.F_true)
    logger.info(f"Wrote {spec.n_samples} {args.generator} samples to {output} and noise-free values to {truth_path}")
    return EXIT_OK


def _fit_dataset(config: ExperimentConfig, args):
    path = args.data or config.dataset.csv_path
    if not path:
        raise UsageError("fit needs a dataset CSV: pass --data or set dataset.csv_path in --config")
    return load_training_data(path, args.noise_variance)


def cmd_fit(args) -> int:
    overrides = _common_overrides(args)
    overrides.update({"kernel": args.kernel, "n": args.n, "params": _parse_assignments(args.param)})
    overrides["optimizer"].update(
        {
            "max_iters": args.max_iters,
            "grad_tol": args.grad_tol,
            "initial_step": args.initial_step,
            "restarts": args.restarts,
        }
    )
    config = load_config(args.config, overrides)
    dataset = _fit_dataset(config, args)
    params = default_params(config.kernel, config.params)
    names = args.train or None
    if isinstance(dataset, MODataset):
        logger.info(f"Training a {dataset.n_outputs}-output '{config.kernel.value}' model with n={config.n}")
        result = train_multioutput(
            dataset, config.kernel, params, config.n, config=config.optimizer, names=names, learn_noise=args.learn_noise
        )
    else:
        kernel = kernel_of(params)
        trained = names if names is not None else list(kernel.hyperparameters)
        fast = all(name in kernel.eigenvalue_only for name in trained)
        run = train_fast_path if fast else train
        logger.info(
            f"Training a '{config.kernel.value}' model with n={config.n} on {dataset.n_samples} samples "
            f"({'fast' if fast else 'general'} path)"
        )
        result = run(
            dataset,
            config.kernel,
            params,
            config.n,
            config=config.optimizer,
            names=trained,
            learn_noise=args.learn_noise,
            learn_scale=args.learn_scale,
        )
    model_path = save_model(result.model, _out_path(config, args.model, "model.json"))
    trace_path = write_trace_csv(_out_path(config, args.trace, "trace.csv"), result.trace)
    logger.info(f"Learned {result.params}; model in {model_path}, trace in {trace_path}")
    if not result.trace.converged:
        logger.warning(f"Training stopped after {result.trace.iterations} iterations without meeting grad_tol")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _prediction_inputs(args) -> np.ndarray:
    if args.grid:
        low, high, count = args.grid
        if int(count) < 1:
            raise UsageError(f"--grid count must be positive, got {count}")
        return np.linspace(float(low), float(high), int(count))
    if not args.data:
        raise UsageError("predict needs --data <csv> or --grid LOW HIGH COUNT")
    return read_columns(args.data, required=("x",))["x"]


def cmd_predict(args) -> int:
    config = load_config(args.config, _common_overrides(args))
    model = load_model(args.model)
    X_star = _prediction_inputs(args)
    if isinstance(model, MOFittedModel):
        outputs = None if not args.outputs else [j - 1 for j in args.outputs]
        posterior = mo_predict(model, X_star, outputs, variance=args.variance, k=args.derivative)
    else:
        if args.outputs and list(args.outputs) != [1]:
            raise UsageError(f"a single-output model has only output 1, got --outputs {args.outputs}")
        posterior = predict_derivative(model, X_star, args.derivative, variance=args.variance)
    output = write_predictions_csv(_out_path(config, args.output, "predictions.csv"), X_star, posterior)
    logger.info(f"Wrote {X_star.size} predictions (derivative order {args.derivative}) to {output}")
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = _common_overrides(args)
    overrides.update(
        {
            "experiment": args.suite,
            "n": args.n,
            "sizes": args.sizes,
            "eig_counts": args.eig_counts,
            "seeds": args.seeds,
            "methods": args.methods,
            "iterations": args.iterations,
            "repeats": args.repeats,
            "exact_max_n": args.exact_max_n,
        }
    )
    config = load_config(args.config, overrides)
    report = run_experiment(config, render=args.render)
    for key, value in report.summary.items():
        logger.info(f"{key}: {value}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    import app as serving

    if args.model:
        serving.store.path = args.model
    if args.model_dir:
        serving.store.model_dir = Path(args.model_dir)
    uvicorn.run(serving.app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="famgp", description="Fast approximate (multi-output) Gaussian processes.")
    parser.add_argument("--log-level", default=None, help="Override FAMGP_LOG_LEVEL.")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=None)
    common.add_argument("--config", default=None, help="JSON file holding an ExperimentConfig.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", parents=[common], help="Write a synthetic dataset CSV.")
    gen.add_argument("generator", choices=["sinusoids", "correlated"])
    gen.add_argument("--n-samples", type=int, default=None)
    gen.add_argument("--x-range", type=float, nargs=2, default=None)
    gen.add_argument("--num-terms", type=int, default=None)
    gen.add_argument("--noise-sd", type=float, default=None)
    gen.add_argument("--l-se", type=float, default=None)
    gen.add_argument("--off-diagonal", type=float, default=None, help="Off-diagonal of a 2 x 2 K_f.")
    gen.add_argument("--noise-var", type=float, default=None)
    gen.add_argument("--derivative", type=int, default=0, help="Derivative order of the noise-free file.")
    gen.add_argument("--output", default=None)
    gen.set_defaults(handler=cmd_gen_data)

    fit_cmd = commands.add_parser("fit", parents=[common], help="Train a model on a dataset CSV.")
    fit_cmd.add_argument("--data", default=None)
    fit_cmd.add_argument("--kernel", choices=[kind.value for kind in KernelKind], default=None)
    fit_cmd.add_argument("--n", type=int, default=None)
    fit_cmd.add_argument("--param", action="append", metavar="NAME=VALUE", help="Initial hyperparameter value.")
    fit_cmd.add_argument("--train", nargs="+", metavar="NAME", help="Hyperparameters to train (default: all).")
    fit_cmd.add_argument("--noise-variance", type=float, default=None)
    fit_cmd.add_argument("--learn-noise", action=argparse.BooleanOptionalAction, default=True)
    fit_cmd.add_argument("--learn-scale", action="store_true")
    fit_cmd.add_argument("--max-iters", type=int, default=None)
    fit_cmd.add_argument("--grad-tol", type=float, default=None)
    fit_cmd.add_argument("--initial-step", type=float, default=None)
    fit_cmd.add_argument("--restarts", type=int, default=None)
    fit_cmd.add_argument("--model", default=None, help="Model JSON path (default: <out-dir>/model.json).")
    fit_cmd.add_argument("--trace", default=None, help="Trace CSV path (default: <out-dir>/trace.csv).")
    fit_cmd.set_defaults(handler=cmd_fit)

    pred = commands.add_parser("predict", parents=[common], help="Predict with a saved model.")
    pred.add_argument("--model", required=True)
    pred.add_argument("--data", default=None, help="CSV with an 'x' column.")
    pred.add_argument("--grid", nargs=3, type=float, metavar=("LOW", "HIGH", "COUNT"), default=None)
    pred.add_argument("--derivative", type=int, default=0)
    pred.add_argument("--variance", action="store_true")
    pred.add_argument("--outputs", type=int, nargs="+", default=None, help="1-based output numbers.")
    pred.add_argument("--output", default=None, help="Predictions CSV (default: <out-dir>/predictions.csv).")
    pred.set_defaults(handler=cmd_predict)

    bench = commands.add_parser("bench", parents=[common], help="Run a benchmark suite.")
    bench.add_argument("suite", choices=["scaling", "rmse-samples", "rmse-eigs", "correlation"])
    bench.add_argument("--n", type=int, default=None)
    bench.add_argument("--sizes", type=int, nargs="+", default=None)
    bench.add_argument("--eig-counts", type=int, nargs="+", default=None)
    bench.add_argument("--seeds", type=int, nargs="+", default=None)
    bench.add_argument("--methods", nargs="+", default=None)
    bench.add_argument("--iterations", type=int, default=None)
    bench.add_argument("--repeats", type=int, default=None)
    bench.add_argument("--exact-max-n", type=int, default=None)
    bench.add_argument("--render", action="store_true", help="Also write a PNG plot.")
    bench.set_defaults(handler=cmd_bench)

    serve = commands.add_parser("serve", help="Serve a saved model over HTTP.")
    serve.add_argument("--model", default=None, help="Model JSON (default: FAMGP_MODEL_PATH).")
    serve.add_argument("--model-dir", default=None, help="Directory POST /model may load from (default: FAMGP_MODEL_DIR).")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit status."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_ERROR
    if args.log_level:
        configure_logging(args.log_level)
    else:
        configure_logging()
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"famgp {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except ValidationError as e:
        logger.error(f"Invalid input: {e}")
        print(f"famgp {args.command}: invalid input: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (FamgpError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"famgp {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR
