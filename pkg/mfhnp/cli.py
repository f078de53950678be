import os
import sys
import logging
import argparse
import argcomplete
import coloredlogs

import pandas as pd

from typing import Dict, List, Optional

from .exceptions import (
    ConfigError,
    DatasetFormatError,
    InfeasibleSplitError,
    MfhnpError,
    NonFiniteLossError,
    PairingError,
    ShapeError,
    VariantError,
)
from .helpers import STDOUT_FORMATS, stdout_like

EXIT_OK = 0
EXIT_USAGE = 2

# Checked in order; subclasses before their bases.
EXIT_CODES = [
    (ConfigError, 3),
    (FileNotFoundError, 4),
    (DatasetFormatError, 5),
    (InfeasibleSplitError, 6),
    (PairingError, 7),
    (NonFiniteLossError, 8),
    (ShapeError, 9),
    (VariantError, 9),
    (MfhnpError, 10),
]


def exit_code_for(error: BaseException) -> Optional[int]:
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return None


def build_simulate_parser(parser: argparse.ArgumentParser) -> None:
    """Given an argparse subparser, build the AS-SIR simulation parser.

    Args:
        parser: An argparse.ArgumentParser.

    Returns: None
    """
    from .epi_sim import DEFAULT_HORIZON_DAYS, DEFAULT_SAMPLES, HIGH_FIDELITY_GROUPS, LOW_FIDELITY_GROUPS

    parser.add_argument("-o", "--out", required=True, help="Dataset directory to write.")
    parser.add_argument("-n", "--n-scenarios", type=int, default=109, help="Number of scenarios. Default: 109")
    parser.add_argument("--high-groups", type=int, default=HIGH_FIDELITY_GROUPS, help="Age groups at high fidelity.")
    parser.add_argument("--low-groups", type=int, default=LOW_FIDELITY_GROUPS, help="Age brackets at low fidelity.")
    parser.add_argument("--horizon", type=int, default=DEFAULT_HORIZON_DAYS, help="Days simulated per scenario.")
    parser.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="Stochastic samples per scenario.")
    parser.add_argument("--seed", type=int, default=0, help="Random seed. Default: 0")
    parser.add_argument("-w", "--workers", type=int, default=1, help="Simulation worker processes. Default: 1")


def build_synth_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-o", "--out", required=True, help="Dataset directory to write.")
    parser.add_argument("--n-low", type=int, default=64, help="Low-fidelity scenarios. Default: 64")
    parser.add_argument("--n-high", type=int, default=64, help="High-fidelity scenarios. Default: 64")
    parser.add_argument("--samples", type=int, default=1, help="Noisy samples per scenario. Default: 1")
    parser.add_argument("--noise", type=float, default=0.0, help="Noise standard deviation. Default: 0")
    parser.add_argument("--seed", type=int, default=0, help="Random seed. Default: 0")


def build_ingest_grid_parser(parser: argparse.ArgumentParser) -> None:
    from .datasets import GRID_MONTHS_IN, GRID_MONTHS_OUT

    parser.add_argument(
        "-g", "--grid-dir", required=True, help="Directory holding low/ and high/ folders of monthly grid files."
    )
    parser.add_argument("-o", "--out", required=True, help="Dataset directory to write.")
    parser.add_argument("--months-in", type=int, default=GRID_MONTHS_IN, help="Input months per window.")
    parser.add_argument("--months-out", type=int, default=GRID_MONTHS_OUT, help="Output months per window.")
    parser.add_argument(
        "--stride", type=int, default=None, help="Months between window starts. Default: months-in + months-out"
    )


def build_split_parser(parser: argparse.ArgumentParser) -> None:
    """Given an argparse subparser, build the split parser.

    Counts given on the command line override the preset's.

    Args:
        parser: An argparse.ArgumentParser.

    Returns: None
    """
    from .datasets import SPLIT_MODES, SPLIT_PRESETS

    parser.add_argument("--dataset", required=True, help="Dataset directory.")
    parser.add_argument("-m", "--mode", choices=SPLIT_MODES, default="nested", help="Split mode. Default: nested")
    parser.add_argument("-p", "--preset", choices=sorted(SPLIT_PRESETS), default="as-sir", help="Split counts preset.")
    parser.add_argument("--n-low", type=int, default=None, help="Low-fidelity training scenarios.")
    parser.add_argument("--n-high", type=int, default=None, help="High-fidelity training scenarios.")
    parser.add_argument("--n-val", type=int, default=None, help="Validation scenarios.")
    parser.add_argument("--n-test", type=int, default=None, help="Test scenarios.")
    parser.add_argument("--candidates", type=int, default=None, help="Size of the training candidate pool.")
    parser.add_argument("--seed", type=int, default=0, help="Random seed. Default: 0")


def _add_train_config_arguments(parser: argparse.ArgumentParser) -> None:
    from .experiment import NLL_MODES, TRAIN_PRESETS

    parser.add_argument("-p", "--preset", choices=sorted(TRAIN_PRESETS), default=None, help="Training preset.")
    parser.add_argument("--lr", dest="learning_rate", type=float, default=None, help="Adam learning rate.")
    parser.add_argument("--batch-size", type=int, default=None, help="Scenarios per batch and level.")
    parser.add_argument("--patience", type=int, default=None, help="Early stopping patience in epochs.")
    parser.add_argument("--max-epochs", type=int, default=None, help="Maximum number of epochs.")
    parser.add_argument("--seed", type=int, default=None, help="Random seed.")
    parser.add_argument(
        "--log-space", dest="log_space_outputs", action="store_true", default=None, help="Model ln(1 + y)."
    )
    parser.add_argument(
        "--no-log-space", dest="log_space_outputs", action="store_false", help="Model y in original units."
    )
    parser.add_argument("--latent-samples", dest="eval_latent_samples", type=int, default=None, help="Latent draws.")
    parser.add_argument("--nll-mode", choices=NLL_MODES, default=None, help="How NLL is computed.")


def build_train_parser(parser: argparse.ArgumentParser) -> None:
    """Given an argparse subparser, build the training parser.

    Args:
        parser: An argparse.ArgumentParser.

    Returns: None
    """
    from .np_models import AGGREGATIONS, VARIANTS

    parser.add_argument("--dataset", required=True, help="Dataset directory with a stored split.")
    parser.add_argument(
        "-v", "--variant", choices=VARIANTS, default=None, help="Model variant. Default: [model] variant, else hnp-mean"
    )
    parser.add_argument(
        "-a",
        "--agg",
        dest="aggregation",
        choices=AGGREGATIONS,
        default=None,
        help="Aggregation. Default: [model] aggregation, else ba",
    )
    parser.add_argument("-o", "--out", required=True, help="Checkpoint file to write.")
    parser.add_argument("--history", default=None, help="History CSV to write. Default: <out>.history.csv")
    parser.add_argument("--d-z", dest="d_z", type=int, default=None, help="Latent width.")
    parser.add_argument("--d-r", dest="d_r", type=int, default=None, help="Representation width.")
    parser.add_argument("--samples", dest="k_samples", type=int, default=None, help="Latent draws per level.")
    _add_train_config_arguments(parser)


def _add_model_input_arguments(parser: argparse.ArgumentParser) -> None:
    from .experiment import EVAL_PARTS

    parser.add_argument("--model", required=True, help="Checkpoint file.")
    parser.add_argument("--dataset", required=True, help="Dataset directory with a stored split.")
    parser.add_argument("--part", choices=EVAL_PARTS, default="test", help="Split part. Default: test")
    parser.add_argument("--latent-samples", dest="eval_latent_samples", type=int, default=None, help="Latent draws.")


def build_evaluate_parser(parser: argparse.ArgumentParser) -> None:
    from .experiment import NLL_MODES

    _add_model_input_arguments(parser)
    parser.add_argument("--nll-mode", choices=NLL_MODES, default=None, help="How NLL is computed.")
    parser.add_argument("-o", "--out", default=None, help="Report file (JSON) to write.")
    parser.add_argument("--per-scenario", action="store_true", help="Print the per-scenario table too.")


def build_predict_parser(parser: argparse.ArgumentParser) -> None:
    _add_model_input_arguments(parser)
    parser.add_argument("-o", "--out", default=None, help="CSV file of per-target mean and std.")


def build_export_parser(parser: argparse.ArgumentParser) -> None:
    _add_model_input_arguments(parser)
    parser.add_argument("-o", "--out-dir", required=True, help="Directory for residuals.csv and trajectories.csv.")
    parser.add_argument(
        "-ag",
        "--age-group",
        action="append",
        dest="age_groups",
        type=int,
        default=[],
        help="Age group to include in the trajectory table. Default: 10, 30, 50, 70 where present.",
    )
    parser.add_argument("--xlsx", action="store_true", help="Also write both tables to tables.xlsx.")


def build_summarize_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-r",
        "--report",
        action="append",
        dest="reports",
        default=[],
        help="An evaluation report as LABEL=PATH. Repeat a label to pool several seeds.",
    )
    parser.add_argument("-o", "--out", default=None, help="CSV file to write.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multi-fidelity hierarchical neural process surrogates")
    parser.add_argument("-d", "--debug", action="store_true", help="Turn on debug logging.")
    parser.add_argument("-cp", "--config-path", action="store", help="Path to an additional config file.")
    parser.add_argument(
        "-so",
        "--stdout-format",
        default="print",
        action="store",
        choices=STDOUT_FORMATS,
        help="desired standard output format. ~~~ NOTE: 'print' (the default) will also summarize large tables. Use 'ascii_table' to avoid that.",
    )

    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True
    build_simulate_parser(subparsers.add_parser("simulate", help="simulate a paired AS-SIR dataset"))
    build_synth_parser(subparsers.add_parser("synth", help="write the synthetic two-fidelity task"))
    build_ingest_grid_parser(subparsers.add_parser("ingest-grid", help="window monthly grids into a dataset"))
    build_split_parser(subparsers.add_parser("split", help="store a train/val/test split in a dataset"))
    build_train_parser(subparsers.add_parser("train", help="train a model"))
    build_evaluate_parser(subparsers.add_parser("evaluate", help="MAE and NLL of a trained model"))
    build_predict_parser(subparsers.add_parser("predict", help="predictive mean and std per target"))
    build_export_parser(subparsers.add_parser("export", help="residual and trajectory tables"))
    build_summarize_parser(subparsers.add_parser("summarize", help="mean and std of reports over seeds"))
    return parser


def train_settings(config, args: argparse.Namespace) -> Dict:
    """TrainConfig values: defaults, then config file, then preset, then flags."""
    from .config import section_overrides
    from .experiment import TRAIN_PRESETS, TrainConfig

    settings = section_overrides(config, "train", TrainConfig)
    if getattr(args, "preset", None):
        settings.update(TRAIN_PRESETS[args.preset])
    for name in TrainConfig.__dataclass_fields__:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    return settings


def _load_split(dataset_dir: str):
    from .datasets import read_dataset

    low, high, split = read_dataset(dataset_dir)
    if split is None:
        raise InfeasibleSplitError(f"{dataset_dir} has no stored split; run `mf-hnp split` first")
    return low, high, split


def _write_dataset(out: str, low, high) -> None:
    from .datasets import write_dataset

    write_dataset(out, low, high)
    print(f" + wrote {out}")


def execute_arguments(config, args: argparse.Namespace) -> int:
    """Logic for executing CLI arguments."""

    from .config import config_digest, section_overrides
    from .helpers import atomic_write_bytes, atomic_write_text, write_table_csv

    tables = []

    if args.command == "simulate":
        from .datasets import sir_task

        low, high = sir_task(
            args.n_scenarios,
            seed=args.seed,
            n_groups_high=args.high_groups,
            n_groups_low=args.low_groups,
            horizon_days=args.horizon,
            n_samples=args.samples,
            workers=args.workers,
        )
        _write_dataset(args.out, low, high)

    if args.command == "synth":
        from .datasets import synth_task

        low, high = synth_task(args.n_low, args.n_high, n_samples=args.samples, noise=args.noise, seed=args.seed)
        _write_dataset(args.out, low, high)

    if args.command == "ingest-grid":
        from .datasets import ingest_grid

        low, high = ingest_grid(args.grid_dir, args.months_in, args.months_out, args.stride)
        _write_dataset(args.out, low, high)

    if args.command == "split":
        from .datasets import SplitSpec, make_split, read_dataset, write_split

        low, high, _ = read_dataset(args.dataset)
        spec = SplitSpec.preset(args.preset, mode=args.mode, seed=args.seed)
        counts = {
            "n_train_low": args.n_low,
            "n_train_high": args.n_high,
            "n_val": args.n_val,
            "n_test": args.n_test,
            "n_candidates": args.candidates,
        }
        counts = {k: v for k, v in counts.items() if v is not None}
        if counts:
            if ("n_train_low" in counts or "n_train_high" in counts) and "n_candidates" not in counts:
                # pool size follows the mode
                counts["n_candidates"] = None
            spec = SplitSpec(**{**spec.__dict__, **counts})
        split = make_split(sorted(set(low.ids) | set(high.ids)), spec, low_ids=low.ids, high_ids=high.ids)
        write_split(args.dataset, split)
        summary = pd.DataFrame(
            [{"part": part, "scenarios": len(split.ids(part))} for part in ("low_train", "high_train", "val", "test")]
        )
        summary.name = f"{split.mode} split (seed {split.seed})"
        tables.append(summary)

    if args.command == "train":
        from .experiment import TrainConfig, build_model, np_config_for, train
        from .np_models import NpConfig, save_model

        low, high, split = _load_split(args.dataset)
        train_config = TrainConfig(**train_settings(config, args))
        model_settings = section_overrides(config, "model", NpConfig)
        config_variant = model_settings.pop("variant", "hnp-mean")
        variant = args.variant or config_variant
        if args.aggregation is not None:
            model_settings["aggregation"] = args.aggregation
        for name in ("d_z", "d_r"):
            if getattr(args, name) is not None:
                model_settings[name] = getattr(args, name)
        if args.k_samples is not None:
            model_settings["k_samples"] = model_settings["s_samples"] = args.k_samples
        np_config = np_config_for(variant, low, high, **model_settings)
        model = build_model(np_config, low, high, split, train_config)
        model, history = train(model, low, high, split, train_config)
        history_path = args.history or f"{args.out}.history.csv"
        save_model(args.out, model)
        history["config_digest"] = model.metadata["config_digest"]
        write_table_csv(history_path, history)
        print(f" + wrote {args.out}")
        print(f" + wrote {history_path}")
        tables.append(history.tail(5))

    if args.command in ("evaluate", "predict", "export"):
        from .experiment import evaluate, export_tables, predict_split, predict_table, tables_to_xlsx, train_config_of
        from .np_models import load_model

        model = load_model(args.model)
        low, high, split = _load_split(args.dataset)
        overrides = {"eval_latent_samples": args.eval_latent_samples, "nll_mode": getattr(args, "nll_mode", None)}
        train_config = train_config_of(model, **{k: v for k, v in overrides.items() if v is not None})
        digest = model.metadata.get("config_digest", config_digest(model.config.to_dict(), train_config.to_dict()))

        if args.command == "evaluate":
            report = evaluate(model, low, high, split, train_config, part=args.part)
            if args.out:
                atomic_write_text(args.out, report.to_json())
                print(f" + wrote {args.out}")
            headline = pd.DataFrame([{"part": report.part, "MAE": report.mae, "NLL": report.nll, "config_digest": digest}])
            headline.name = f"{model.config.variant}-{model.config.aggregation}"
            tables.append(headline)
            if args.per_scenario:
                tables.append(report.to_frame())

        if args.command == "predict":
            preds = predict_table(predict_split(model, low, high, split, train_config, part=args.part))
            preds["config_digest"] = digest
            if args.out:
                write_table_csv(args.out, preds)
                print(f" + wrote {args.out}")
            else:
                tables.append(preds)

        if args.command == "export":
            exported = export_tables(
                model, low, high, split, train_config, part=args.part, age_groups=args.age_groups or None
            )
            for name, table in exported.items():
                table["config_digest"] = digest
                path = os.path.join(args.out_dir, f"{name}.csv")
                write_table_csv(path, table)
                print(f" + wrote {path}")
            if args.xlsx:
                path = os.path.join(args.out_dir, "tables.xlsx")
                atomic_write_bytes(path, tables_to_xlsx(exported))
                print(f" + wrote {path}")

    if args.command == "summarize":
        from .experiment import EvalReport, summarize_reports

        if not args.reports:
            logging.error("summarize needs at least one --report LABEL=PATH")
            return EXIT_USAGE
        reports: Dict[str, List[EvalReport]] = {}
        for item in args.reports:
            label, sep, path = item.partition("=")
            if not sep:
                label, path = os.path.splitext(os.path.basename(item))[0], item
            with open(path, "r", encoding="utf-8") as fp:
                reports.setdefault(label, []).append(EvalReport.from_json(fp.read()))
        summary = summarize_reports(reports)
        if args.out:
            write_table_csv(args.out, summary)
            print(f" + wrote {args.out}")
        tables.append(summary)

    for table in tables:
        stdout_like(table, format=args.stdout_format)
    return EXIT_OK


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for mfhnp on the CLI."""

    from .config import load_config, DEFAULT_CONFIG_PATHS

    parser = build_parser()
    argcomplete.autocomplete(parser)
    args = parser.parse_args(argv)

    coloredlogs.install(level="DEBUG" if args.debug else "INFO")

    config_paths = list(DEFAULT_CONFIG_PATHS)
    if args.config_path:
        if not os.path.exists(args.config_path):
            logging.error(f"{args.config_path} does not exist.")
            return exit_code_for(FileNotFoundError())
        config_paths.append(args.config_path)

    config = load_config(config_paths)
    if not config:
        logging.warning("continuing with built-in defaults")

    try:
        return execute_arguments(config, args)
    except Exception as e:
        code = exit_code_for(e)
        if code is None:
            raise
        logging.error(f"{type(e).__name__}: {e}")
        return code


if __name__ == "__main__":
    sys.exit(cli_main())
