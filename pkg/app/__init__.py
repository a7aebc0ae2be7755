import argparse
import difflib
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from eeg_engine.architectures import receptive_field
from eeg_engine.errors import ConfigError, DataError, EngineError, UsageError
from eeg_engine.models import (
    REDUCED_MINUTES,
    ArchitectureConfig,
    PerturbationConfig,
    PreprocessConfig,
    SearchConfig,
    SignatureConfig,
    TrainConfig,
)
from eeg_engine.pipeline import ExperimentPipeline, RunDirectory
from utils import flatconfig
from utils.logger import get_logger

logger = get_logger(__name__)

COMMANDS = (
    "synth",
    "preprocess",
    "train",
    "eval",
    "reduced-grid",
    "moving-avg",
    "spectral-map",
    "perturb-map",
    "report-words",
    "hpo-search",
)

MINUTE_CHOICES = ["1", "2", "4", "8", "16", "all"]

# flag -> (config key, argparse keyword arguments)
FLAGS: Dict[str, Tuple[str, dict]] = {
    "--arch": ("arch", {"choices": ["deep", "shallow", "linear"]}),
    "--seed": ("seed", {"type": int}),
    "--crop-stride": ("crop_stride", {"type": int}),
    "--train-minutes": ("train_minutes", {"choices": MINUTE_CHOICES}),
    "--test-minutes": ("test_minutes", {"choices": MINUTE_CHOICES}),
    "--epochs": ("epochs", {"type": int}),
    "--workers": ("workers", {"type": int}),
    "--data": ("data", {"metavar": "DIR"}),
    "--model": ("model", {"metavar": "DIR"}),
    "--n-per-class": ("n_per_class", {"type": int}),
    "--duration-s": ("duration_s", {"type": float}),
    "--null": ("null", {"action": "store_const", "const": "true"}),
    "--trials": ("search.budget", {"type": int}),
    "--repetitions": ("perturbation.n_repetitions", {"type": int}),
}

COMMON_FLAGS = ["--seed", "--workers"]

COMMAND_FLAGS: Dict[str, List[str]] = {
    "synth": ["--n-per-class", "--duration-s", "--null"],
    "preprocess": ["--data"],
    "train": ["--data", "--arch", "--epochs", "--crop-stride", "--train-minutes"],
    "eval": ["--data", "--model", "--crop-stride", "--test-minutes"],
    "reduced-grid": ["--data", "--arch", "--epochs", "--crop-stride", "--train-minutes"],
    "moving-avg": ["--data", "--model", "--crop-stride"],
    "spectral-map": ["--data"],
    "perturb-map": ["--data", "--model", "--crop-stride", "--repetitions"],
    "report-words": ["--data", "--model", "--crop-stride"],
    "hpo-search": ["--data", "--arch", "--epochs", "--crop-stride", "--trials"],
}

# Input directory keys each command reads, with the command whose output is the default
INPUTS: Dict[str, Dict[str, str]] = {
    "synth": {},
    "preprocess": {"data": "synth"},
    "train": {"data": "synth"},
    "eval": {"data": "synth", "model": "train"},
    "reduced-grid": {"data": "synth"},
    "moving-avg": {"data": "synth", "model": "train"},
    "spectral-map": {"data": "synth"},
    "perturb-map": {"data": "synth", "model": "train"},
    "report-words": {"data": "synth", "model": "train"},
    "hpo-search": {"data": "synth"},
}

SECTIONS = {
    "architecture": ArchitectureConfig,
    "perturbation": PerturbationConfig,
    "preprocess": PreprocessConfig,
    "search": SearchConfig,
    "signature": SignatureConfig,
}

EXTRA_KEYS = {
    "arch",
    "data",
    "model",
    "n_per_class",
    "duration_s",
    "null",
    "eval_fraction",
    "minutes",
    "window_s",
    "step_s",
    "k",
    "min_count",
    "evaluate_incumbent",
}

DEFAULTS = {
    "arch": "deep",
    "seed": "0",
    "n_per_class": "100",
    "duration_s": "120.0",
    "null": "false",
    "eval_fraction": "0.3",
    "minutes": flatconfig.format_value(list(REDUCED_MINUTES)),
    "window_s": "300.0",
    "step_s": "30.0",
    "k": "10",
    "min_count": "2",
    "evaluate_incumbent": "true",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _suggest(token: str, known: Sequence[str]) -> str:
    flag = token.split("=", 1)[0]
    matches = difflib.get_close_matches(flag, known, n=1)
    return f"unrecognized argument {flag}" + (f"; did you mean {matches[0]}?" if matches else "")


def _is_true(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


def _section_values(resolved: Dict[str, str], section: str) -> Dict[str, str]:
    return flatconfig.unprefixed(resolved, section)


def build_train_config(resolved: Dict[str, str]) -> TrainConfig:
    return TrainConfig.from_flat({k: v for k, v in resolved.items() if k in TrainConfig.model_fields})


def build_architecture(resolved: Dict[str, str]) -> ArchitectureConfig:
    """Default architecture of ``arch`` with ``architecture.*`` overrides.

    Unless ``architecture.input_len_samples`` is given, the input length follows the
    receptive field of the overridden layers.
    """
    overrides = _section_values(resolved, "architecture")
    base = ArchitectureConfig.default_for(overrides.get("kind", resolved["arch"]))
    if not overrides:
        return base
    values = {key: flatconfig.format_value(value) for key, value in base.to_flat().items()}
    values.update(overrides)
    config = ArchitectureConfig.from_flat(values)
    if "input_len_samples" not in overrides and config.kind != "linear":
        config = config.model_copy(update={"input_len_samples": receptive_field(config)})
    return config


def build_section(resolved: Dict[str, str], section: str, defaults: Optional[Dict[str, str]] = None):
    return SECTIONS[section].from_flat(flatconfig.merge(defaults, _section_values(resolved, section)))


class CommandLineApp:
    """The ``eeg-engine`` command line: parses, resolves the config and runs one pipeline step."""

    def __init__(self, workdir: str, default_workers: int = 1):
        self.workdir = workdir
        self.default_workers = default_workers
        self.parser = self._build_parser()

    def _build_parser(self) -> argparse.ArgumentParser:
        parser = _Parser(prog="eeg-engine", description="Decode pathological vs normal EEG recordings.")
        commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
        commands.required = True
        for command in COMMANDS:
            sub = commands.add_parser(command)
            for flag in COMMON_FLAGS + COMMAND_FLAGS[command]:
                key, kwargs = FLAGS[flag]
                sub.add_argument(flag, dest=key, default=None, **kwargs)
            sub.add_argument("--out", metavar="DIR", default=None)
            sub.add_argument("--config", metavar="FILE", default=None)
            sub.add_argument("--force", action="store_true")
        return parser

    def known_flags(self, command: str) -> List[str]:
        return COMMON_FLAGS + COMMAND_FLAGS[command] + ["--out", "--config", "--force"]

    def parse(self, argv: Sequence[str]) -> argparse.Namespace:
        args, unknown = self.parser.parse_known_args(list(argv))
        if unknown:
            raise UsageError(_suggest(unknown[0], self.known_flags(args.command)))
        return args

    def resolve(self, args: argparse.Namespace) -> Dict[str, str]:
        """Defaults, then the ``--config`` file, then flags."""
        file_values: Dict[str, str] = {}
        if args.config:
            if not os.path.isfile(args.config):
                raise DataError(f"Config file not found: {args.config}")
            try:
                file_values = flatconfig.load_file(args.config)
            except ValueError as e:
                raise UsageError(f"{args.config}: {e}") from e
            file_values = {k: v for k, v in file_values.items() if not k.startswith("manifest.")}

        flag_values = {}
        for flag in COMMON_FLAGS + COMMAND_FLAGS[args.command]:
            key = FLAGS[flag][0]
            value = getattr(args, key, None)
            if value is not None:
                flag_values[key] = flatconfig.format_value(value)

        resolved = flatconfig.merge(DEFAULTS, {"workers": str(self.default_workers)}, file_values, flag_values)
        for key in resolved:
            section = key.split(".", 1)[0] if "." in key else None
            if section is None and key not in EXTRA_KEYS and key not in TrainConfig.model_fields:
                known = sorted(EXTRA_KEYS | set(TrainConfig.model_fields))
                raise UsageError(_suggest(key, known).replace("argument", "config key"))
            if section is not None and section not in SECTIONS:
                raise UsageError(f"Unknown config section: {section}")

        for key, producer in INPUTS[args.command].items():
            resolved.setdefault(key, os.path.join(self.workdir, producer))
        return resolved

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Run one command; returns the process exit code."""
        argv = sys.argv[1:] if argv is None else argv
        try:
            args = self.parse(argv)
            resolved = self.resolve(args)
            print(f"# resolved config for {args.command}")
            print(flatconfig.dumps(resolved), end="")
            return self.execute(args.command, resolved, args.out, args.force)
        except EngineError as e:
            logger.error(f"{type(e).__name__}: {e}")
            return e.exit_code
        except Exception as e:
            logger.exception(f"Command failed: {str(e)}")
            return 3

    def execute(self, command: str, resolved: Dict[str, str], out: Optional[str] = None, force: bool = False) -> int:
        try:
            seed = int(resolved["seed"])
            workers = int(resolved["workers"])
            configs = self._typed(command, resolved, seed)
        except (ValidationError, ConfigError, ValueError) as e:
            raise UsageError(f"Invalid configuration: {e}") from e
        if workers < 1:
            raise UsageError(f"--workers must be at least 1, got {workers}")

        inputs = [resolved[key] for key in INPUTS[command]]
        for path in inputs:
            if not os.path.isdir(path):
                raise DataError(f"Input directory not found: {path}")

        out_dir = out or os.path.join(self.workdir, command)
        with RunDirectory(out_dir, force=force) as run_dir:
            run_dir.write_manifest(command, resolved, seed, inputs)
            logger.info(f"Running {command} into {out_dir}")
            pipeline = ExperimentPipeline(out_dir, workers=workers)
            self._dispatch(command, pipeline, resolved, configs)
            logger.info(f"{command} finished; artifacts in {out_dir}")
        return 0

    def _typed(self, command: str, resolved: Dict[str, str], seed: int) -> dict:
        configs: dict = {"train": build_train_config(resolved)}
        if command in ("train", "reduced-grid"):
            configs["architecture"] = build_architecture(resolved)
        if command == "synth":
            if _is_true(resolved["null"]):
                configs["signature"] = SignatureConfig.null()
            else:
                configs["signature"] = build_section(resolved, "signature")
        if command == "preprocess":
            configs["preprocess"] = build_section(resolved, "preprocess")
        if command == "perturb-map":
            configs["perturbation"] = build_section(resolved, "perturbation", {"seed": str(seed)})
        if command == "hpo-search":
            if resolved["arch"] == "linear":
                raise ConfigError("hpo-search explores deep or shallow architectures, not linear")
            configs["search"] = build_section(resolved, "search", {"seed": str(seed)})
        return configs

    def _dispatch(self, command: str, pipeline: ExperimentPipeline, resolved: Dict[str, str], configs: dict) -> None:
        train_config: TrainConfig = configs["train"]
        if command == "synth":
            pipeline.synth(
                int(resolved["n_per_class"]),
                float(resolved["duration_s"]),
                train_config.seed,
                configs["signature"],
                float(resolved["eval_fraction"]),
            )
        elif command == "preprocess":
            pipeline.preprocess(resolved["data"], configs["preprocess"])
        elif command == "train":
            pipeline.train(resolved["data"], configs["architecture"], train_config)
        elif command == "eval":
            pipeline.evaluate(resolved["model"], resolved["data"], train_config.crop_stride, train_config.test_minutes)
        elif command == "reduced-grid":
            minutes = (
                [train_config.train_minutes]
                if train_config.train_minutes is not None
                else [int(m) for m in flatconfig.split_list(resolved["minutes"])]
            )
            pipeline.reduced_grid(resolved["data"], configs["architecture"], train_config, minutes)
        elif command == "moving-avg":
            pipeline.moving_average(
                resolved["model"],
                resolved["data"],
                train_config.crop_stride,
                float(resolved["window_s"]),
                float(resolved["step_s"]),
            )
        elif command == "spectral-map":
            pipeline.spectral_map(resolved["data"])
        elif command == "perturb-map":
            pipeline.perturb_map(resolved["model"], resolved["data"], train_config.crop_stride, configs["perturbation"])
        elif command == "report-words":
            pipeline.report_words(
                resolved["model"], resolved["data"], train_config.crop_stride, int(resolved["k"]), int(resolved["min_count"])
            )
        elif command == "hpo-search":
            pipeline.hpo_search(
                resolved["data"],
                resolved["arch"],
                train_config,
                configs["search"],
                _is_true(resolved["evaluate_incumbent"]),
            )


def create_app() -> CommandLineApp:
    """Create and configure the command line application.

    Returns:
        A configured CommandLineApp instance
    """
    workdir = os.environ.get("EEG_ENGINE_WORKDIR", "runs")
    try:
        workers = int(os.environ.get("EEG_ENGINE_WORKERS", "1"))
    except ValueError:
        logger.warning("EEG_ENGINE_WORKERS is not an integer; using 1")
        workers = 1
    return CommandLineApp(workdir=workdir, default_workers=workers)
