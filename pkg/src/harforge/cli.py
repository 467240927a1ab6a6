"""Pipeline driver: raw streams to trained models, reports and charts.

Each stage reads the previous stage's files from a shared artifact
directory and writes its own, plus a small JSON report with row counts,
duration and the hash of the configuration slice it depends on. A stage
whose outputs already exist under the same config hash is skipped; if the
hash differs the stage refuses to overwrite unless --force is given.

Exit codes: 0 success (including no-op), 1 internal error, 2 bad usage or
a missing input file, 3 existing outputs built from a different config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import date

from .align import (
    align_cohort,
    read_aligned_csv,
    read_profiles_csv,
    write_aligned_csv,
    write_profiles_csv,
)
from .core import ActivityTaxonomy, default_taxonomy, load_taxonomy, save_taxonomy
from .dataset import (
    N_CHANNELS,
    SplitSpec,
    apply_normalizer,
    build_windows,
    fit_normalizer,
    load_window_store,
    median_class_count,
    normalizer_from_json,
    normalizer_to_json,
    oversample_minority,
    read_split_manifest,
    split_manifest_text,
    split_windows,
    stratified_sample,
    write_window_store,
)
from .evaluation import confusion_to_csv, evaluate_run, report_to_json, trend_csv
from .impute import ImputeConfig, impute_cohort, write_stats_report
from .ingest import (
    parse_activity_blocks,
    parse_hr_stream,
    parse_schedule,
    parse_sleep_segments,
    serialize_activity_blocks,
    serialize_hr_stream,
    serialize_schedule,
    serialize_sleep_segments,
)
from .model import (
    LossConfig,
    TrainConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
    windows_to_arrays,
)
from .synth import CohortConfig, generate_cohort, mask_report, read_truth_csv, write_cohort
from .viz import activity_metrics, group_baseline, radar_index_csv, render_radar, save_radar

STAGE_ORDER = ("synth", "ingest", "align", "impute", "dataset", "train", "eval", "viz")
STAGES = STAGE_ORDER + ("pipeline",)

CONFIG_ENV_VAR = "HARFORGE_CONFIG"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2
EXIT_STALE = 3


class StageInputError(Exception):
    """A required upstream artifact is missing."""


class StaleConfigError(Exception):
    """Outputs on disk were built from a different configuration."""


class ConfigError(Exception):
    """The configuration file or overrides are malformed."""


# key -> (type tag, default). Tags: int, float, bool, str, date, ints, strs, floats.
_KEY_SPEC: dict[str, tuple[str, str]] = {
    "cohort.n_users": ("int", "20"),
    "cohort.n_days": ("int", "30"),
    "cohort.seed": ("int", "7"),
    "cohort.start_date": ("date", "2024-03-04"),
    "cohort.resting_hr_mean": ("float", "55.0"),
    "cohort.resting_hr_sd": ("float", "5.0"),
    "cohort.hr_range_mean": ("float", "135.0"),
    "cohort.hr_range_sd": ("float", "8.0"),
    "cohort.awake_hr_frac": ("float", "0.15"),
    "cohort.hr_sd_scale": ("float", "1.0"),
    "cohort.user_frac_jitter_sd": ("float", "0.0"),
    "cohort.sleep_dropout": ("float", "0.40"),
    "cohort.hr_dropout": ("float", "0.02"),
    "align.tz_offset_minutes": ("int", "120"),
    "align.profile_scope": ("str", "day"),
    "impute.night_start_minute": ("int", "1260"),
    "impute.night_end_minute": ("int", "419"),
    "impute.night_sleep_factor": ("float", "1.05"),
    "impute.day_sleep_factor": ("float", "1.2"),
    "impute.awake_factor": ("float", "1.2"),
    "impute.max_gap_minutes": ("int", "120"),
    "dataset.widths": ("ints", "15,30,45,60"),
    "dataset.label_threshold": ("float", "0.70"),
    "dataset.oversample": ("bool", "true"),
    "dataset.seed": ("int", "0"),
    "split.modes": ("strs", "temporal,user"),
    "split.fractions": ("floats", "0.7,0.15,0.15"),
    "split.seed": ("int", "0"),
    "train.hidden_size": ("int", "32"),
    "train.batch_size": ("int", "256"),
    "train.learning_rate": ("float", "0.001"),
    "train.weight_decay": ("float", "0.01"),
    "train.max_epochs": ("int", "100"),
    "train.early_stopping_patience": ("int", "10"),
    "train.seed": ("int", "0"),
    "train.dropout": ("float", "0.1"),
    "train.pooling": ("str", "final"),
    "loss.lambda1": ("float", "0.3"),
    "loss.lambda2": ("float", "1.0"),
    "loss.alpha": ("float", "2.0"),
    "loss.gamma": ("float", "2.0"),
    "viz.band": ("str", "sd"),
    "taxonomy.path": ("str", ""),
}

#: config keys each stage's output depends on (selected by prefix match)
_STAGE_PREFIXES: dict[str, tuple[str, ...]] = {}
_STAGE_PREFIXES["synth"] = ("cohort.", "align.tz_offset_minutes")
_STAGE_PREFIXES["ingest"] = _STAGE_PREFIXES["synth"] + ("taxonomy.",)
_STAGE_PREFIXES["align"] = _STAGE_PREFIXES["ingest"] + ("align.",)
_STAGE_PREFIXES["impute"] = _STAGE_PREFIXES["align"] + ("impute.",)
_STAGE_PREFIXES["dataset"] = _STAGE_PREFIXES["impute"] + ("dataset.", "split.")
_STAGE_PREFIXES["train"] = _STAGE_PREFIXES["dataset"] + ("train.", "loss.")
_STAGE_PREFIXES["eval"] = _STAGE_PREFIXES["train"]
_STAGE_PREFIXES["viz"] = _STAGE_PREFIXES["impute"] + ("viz.",)


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``section.key = value`` lines; # starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        values[key] = value
    return values


def _parse_typed(key: str, kind: str, text: str):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == "date":
            return date.fromisoformat(text)
        if kind == "ints":
            return tuple(int(p.strip()) for p in text.split(",") if p.strip())
        if kind == "floats":
            return tuple(float(p.strip()) for p in text.split(",") if p.strip())
        if kind == "strs":
            return tuple(p.strip() for p in text.split(",") if p.strip())
        return text
    except ValueError as err:
        raise ConfigError(f"config key {key}: cannot parse {text!r} as {kind}") from err


def _canonical_text(kind: str, value) -> str:
    if kind == "int":
        return str(value)
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind == "date":
        return value.isoformat()
    if kind == "ints":
        return ",".join(str(v) for v in value)
    if kind == "floats":
        return ",".join(repr(float(v)) for v in value)
    if kind == "strs":
        return ",".join(value)
    return str(value)


class PipelineConfig:
    """Typed view over the resolved flat key space."""

    def __init__(self, values: dict[str, str]):
        unknown = sorted(set(values) - set(_KEY_SPEC))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        self._typed = {}
        for key, (kind, default) in _KEY_SPEC.items():
            self._typed[key] = _parse_typed(key, kind, values.get(key, default))
        modes = self._typed["split.modes"]
        bad = [m for m in modes if m not in ("temporal", "user")]
        if bad or not modes:
            raise ConfigError(f"split.modes must name temporal and/or user, got {modes!r}")
        if not self._typed["dataset.widths"]:
            raise ConfigError("dataset.widths must name at least one width")

    def __getitem__(self, key: str):
        return self._typed[key]

    def canonical_lines(self) -> list[str]:
        return [
            f"{key}={_canonical_text(_KEY_SPEC[key][0], self._typed[key])}"
            for key in sorted(_KEY_SPEC)
        ]

    @property
    def widths(self) -> tuple[int, ...]:
        return self._typed["dataset.widths"]

    @property
    def split_modes(self) -> tuple[str, ...]:
        return self._typed["split.modes"]

    def cohort_config(self) -> CohortConfig:
        return CohortConfig(
            n_users=self["cohort.n_users"],
            n_days=self["cohort.n_days"],
            seed=self["cohort.seed"],
            start_date=self["cohort.start_date"],
            tz_offset_minutes=self["align.tz_offset_minutes"],
            resting_hr_mean=self["cohort.resting_hr_mean"],
            resting_hr_sd=self["cohort.resting_hr_sd"],
            hr_range_mean=self["cohort.hr_range_mean"],
            hr_range_sd=self["cohort.hr_range_sd"],
            awake_hr_frac=self["cohort.awake_hr_frac"],
            hr_sd_scale=self["cohort.hr_sd_scale"],
            user_frac_jitter_sd=self["cohort.user_frac_jitter_sd"],
            sleep_dropout=self["cohort.sleep_dropout"],
            hr_dropout=self["cohort.hr_dropout"],
        )

    def impute_config(self) -> ImputeConfig:
        return ImputeConfig(
            night_start_minute=self["impute.night_start_minute"],
            night_end_minute=self["impute.night_end_minute"],
            night_sleep_factor=self["impute.night_sleep_factor"],
            day_sleep_factor=self["impute.day_sleep_factor"],
            awake_factor=self["impute.awake_factor"],
            max_gap_minutes=self["impute.max_gap_minutes"],
        )

    def split_spec(self, mode: str) -> SplitSpec:
        fractions = self["split.fractions"]
        if len(fractions) != 3:
            raise ConfigError("split.fractions needs exactly three numbers")
        return SplitSpec(mode=mode, fractions=fractions, seed=self["split.seed"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self["train.batch_size"],
            learning_rate=self["train.learning_rate"],
            weight_decay=self["train.weight_decay"],
            max_epochs=self["train.max_epochs"],
            early_stopping_patience=self["train.early_stopping_patience"],
            seed=self["train.seed"],
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lambda1=self["loss.lambda1"],
            lambda2=self["loss.lambda2"],
            alpha=self["loss.alpha"],
            gamma=self["loss.gamma"],
        )

    def taxonomy(self) -> ActivityTaxonomy:
        path = self["taxonomy.path"]
        if path:
            if not os.path.exists(path):
                raise StageInputError(f"missing taxonomy file {path}")
            return load_taxonomy(path)
        return default_taxonomy()


def stage_config_hash(stage: str, cfg: PipelineConfig) -> str:
    prefixes = _STAGE_PREFIXES[stage]
    lines = [
        line
        for line in cfg.canonical_lines()
        if any(line.startswith(p) for p in prefixes)
    ]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


class Layout:
    """Paths inside one artifact directory."""

    def __init__(self, root: str):
        self.root = root

    def dir(self, name: str) -> str:
        return os.path.join(self.root, name)

    def path(self, dirname: str, filename: str) -> str:
        return os.path.join(self.root, dirname, filename)

    def report_path(self, stage: str) -> str:
        return os.path.join(self.root, "reports", f"{stage}.json")


def _run_names(cfg: PipelineConfig) -> list[tuple[int, str]]:
    return [(w, mode) for w in cfg.widths for mode in cfg.split_modes]


def stage_inputs(stage: str, cfg: PipelineConfig, lay: Layout) -> list[str]:
    raw = [lay.path("raw", n) for n in ("hr.csv", "activity.csv", "sleep.csv", "schedule.csv")]
    canonical = [
        lay.path("canonical", n)
        for n in ("hr.csv", "activity.csv", "sleep.csv", "schedule.csv", "taxonomy.csv")
    ]
    if stage == "synth":
        return []
    if stage == "ingest":
        return raw
    if stage == "align":
        return canonical
    if stage == "impute":
        return [lay.path("aligned", "aligned.csv"), lay.path("aligned", "profiles.csv")]
    if stage == "dataset":
        return [
            lay.path("imputed", "imputed.csv"),
            lay.path("aligned", "profiles.csv"),
            lay.path("canonical", "taxonomy.csv"),
        ]
    if stage == "train":
        files = [lay.path("canonical", "taxonomy.csv")]
        for w in cfg.widths:
            files.append(lay.path("dataset", f"windows_w{w}.jsonl"))
            files.append(lay.path("dataset", f"splits_w{w}.json"))
        return files
    if stage == "eval":
        files = [lay.path("canonical", "taxonomy.csv")]
        for w, mode in _run_names(cfg):
            files.append(lay.path("train", f"checkpoint_w{w}_{mode}.json"))
            files.append(lay.path("train", f"normalizer_w{w}_{mode}.json"))
        for w in cfg.widths:
            files.append(lay.path("dataset", f"windows_w{w}.jsonl"))
            files.append(lay.path("dataset", f"splits_w{w}.json"))
        return files
    if stage == "viz":
        return [lay.path("imputed", "imputed.csv"), lay.path("aligned", "profiles.csv")]
    raise ValueError(f"unknown stage {stage!r}")


def stage_outputs(stage: str, cfg: PipelineConfig, lay: Layout) -> list[str]:
    if stage == "synth":
        return [
            lay.path("raw", n)
            for n in ("hr.csv", "activity.csv", "sleep.csv", "schedule.csv", "truth.csv")
        ]
    if stage == "ingest":
        return [
            lay.path("canonical", n)
            for n in ("hr.csv", "activity.csv", "sleep.csv", "schedule.csv", "taxonomy.csv")
        ]
    if stage == "align":
        return [lay.path("aligned", "aligned.csv"), lay.path("aligned", "profiles.csv")]
    if stage == "impute":
        return [lay.path("imputed", "imputed.csv"), lay.path("imputed", "impute_stats.csv")]
    if stage == "dataset":
        files = []
        for w in cfg.widths:
            files.append(lay.path("dataset", f"windows_w{w}.jsonl"))
            files.append(lay.path("dataset", f"splits_w{w}.json"))
        return files
    if stage == "train":
        files = []
        for w, mode in _run_names(cfg):
            files.append(lay.path("train", f"checkpoint_w{w}_{mode}.json"))
            files.append(lay.path("train", f"history_w{w}_{mode}.json"))
            files.append(lay.path("train", f"normalizer_w{w}_{mode}.json"))
        return files
    if stage == "eval":
        files = []
        for w, mode in _run_names(cfg):
            files.append(lay.path("eval", f"report_w{w}_{mode}.json"))
            files.append(lay.path("eval", f"confusion_l1_w{w}_{mode}.csv"))
            files.append(lay.path("eval", f"confusion_l2_w{w}_{mode}.csv"))
        files.append(lay.path("eval", "trends.csv"))
        return files
    if stage == "viz":
        return [lay.path("viz", "index.csv")]
    raise ValueError(f"unknown stage {stage!r}")


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _count_rows(csv_text: str) -> int:
    return max(0, csv_text.count("\n") - 1)


def _stage_synth(cfg: PipelineConfig, lay: Layout) -> dict:
    cohort = generate_cohort(cfg.cohort_config())
    os.makedirs(lay.dir("raw"), exist_ok=True)
    write_cohort(cohort, lay.dir("raw"))
    return {
        "users": cfg["cohort.n_users"],
        "days": cfg["cohort.n_days"],
        "hr_rows": _count_rows(cohort.hr_csv),
        "activity_rows": _count_rows(cohort.activity_csv),
        "sleep_rows": _count_rows(cohort.sleep_csv),
        "schedule_rows": _count_rows(cohort.schedule_csv),
    }


def _stage_ingest(cfg: PipelineConfig, lay: Layout) -> dict:
    taxonomy = cfg.taxonomy()
    with open(lay.path("raw", "hr.csv"), encoding="utf-8") as fh:
        hr = parse_hr_stream(fh)
    with open(lay.path("raw", "activity.csv"), encoding="utf-8") as fh:
        blocks = parse_activity_blocks(fh)
    with open(lay.path("raw", "sleep.csv"), encoding="utf-8") as fh:
        segments = parse_sleep_segments(fh)
    with open(lay.path("raw", "schedule.csv"), encoding="utf-8") as fh:
        schedule = parse_schedule(fh, taxonomy)
    os.makedirs(lay.dir("canonical"), exist_ok=True)
    _write_text(lay.path("canonical", "hr.csv"), serialize_hr_stream(hr))
    _write_text(lay.path("canonical", "activity.csv"), serialize_activity_blocks(blocks))
    _write_text(lay.path("canonical", "sleep.csv"), serialize_sleep_segments(segments))
    _write_text(lay.path("canonical", "schedule.csv"), serialize_schedule(schedule))
    save_taxonomy(taxonomy, lay.path("canonical", "taxonomy.csv"))
    return {
        "hr_samples": len(hr),
        "activity_blocks": len(blocks),
        "sleep_segments": len(segments),
        "schedule_blocks": len(schedule),
    }


def _stage_align(cfg: PipelineConfig, lay: Layout) -> dict:
    taxonomy = load_taxonomy(lay.path("canonical", "taxonomy.csv"))
    with open(lay.path("canonical", "hr.csv"), encoding="utf-8") as fh:
        hr = parse_hr_stream(fh)
    with open(lay.path("canonical", "activity.csv"), encoding="utf-8") as fh:
        blocks = parse_activity_blocks(fh)
    with open(lay.path("canonical", "sleep.csv"), encoding="utf-8") as fh:
        segments = parse_sleep_segments(fh)
    with open(lay.path("canonical", "schedule.csv"), encoding="utf-8") as fh:
        schedule = parse_schedule(fh, taxonomy)
    aligned = align_cohort(
        hr,
        blocks,
        segments,
        schedule,
        tz_offset_minutes=cfg["align.tz_offset_minutes"],
        profile_scope=cfg["align.profile_scope"],
    )
    _write_text(lay.path("aligned", "aligned.csv"), write_aligned_csv(aligned.days))
    _write_text(lay.path("aligned", "profiles.csv"), write_profiles_csv(aligned.profiles))
    low = sum(1 for p in aligned.profiles.values() if p.low_confidence)
    return {
        "user_days": len(aligned.days),
        "profiles": len(aligned.profiles),
        "low_confidence_profiles": low,
    }


def _stage_impute(cfg: PipelineConfig, lay: Layout) -> dict:
    with open(lay.path("aligned", "aligned.csv"), encoding="utf-8") as fh:
        pre_days = read_aligned_csv(fh)
    with open(lay.path("aligned", "profiles.csv"), encoding="utf-8") as fh:
        profiles = read_profiles_csv(fh)
    post_days, stats, marks = impute_cohort(pre_days, profiles, cfg.impute_config())
    _write_text(lay.path("imputed", "imputed.csv"), write_aligned_csv(post_days))
    _write_text(lay.path("imputed", "impute_stats.csv"), write_stats_report(stats))
    counts: dict = {
        "user_days": len(post_days),
        "rule1_min": sum(s.rule1_min for s in stats),
        "rule2_min": sum(s.rule2_min for s in stats),
        "rule3_min": sum(s.rule3_min for s in stats),
    }
    truth_path = lay.path("raw", "truth.csv")
    if os.path.exists(truth_path):
        with open(truth_path, encoding="utf-8") as fh:
            truth = read_truth_csv(fh)
        report = mask_report(truth, pre_days, post_days, marks)
        payload = {
            "total_minutes": report.total_minutes,
            "masked_minutes": report.masked_minutes,
            "resolved_minutes": report.resolved_minutes,
            "agreeing_minutes": report.agreeing_minutes,
            "agreement": report.agreement,
            "rule_counts": {str(k): v for k, v in report.rule_counts.items()},
            "rule_precision": {str(k): v for k, v in report.rule_precision.items()},
            "state_recall": report.state_recall,
            "residual_unknown_fraction": report.residual_unknown_fraction,
        }
        _write_text(
            lay.path("imputed", "mask_report.json"),
            json.dumps(payload, sort_keys=True, indent=2) + "\n",
        )
        counts["masked_minutes"] = report.masked_minutes
        counts["agreement"] = report.agreement
        counts["residual_unknown_fraction"] = report.residual_unknown_fraction
    return counts


def _stage_dataset(cfg: PipelineConfig, lay: Layout) -> dict:
    taxonomy = load_taxonomy(lay.path("canonical", "taxonomy.csv"))
    with open(lay.path("imputed", "imputed.csv"), encoding="utf-8") as fh:
        days = read_aligned_csv(fh)
    with open(lay.path("aligned", "profiles.csv"), encoding="utf-8") as fh:
        profiles = read_profiles_csv(fh)
    counts: dict = {}
    for width in cfg.widths:
        windows = build_windows(
            days, profiles, width, taxonomy, cfg["dataset.label_threshold"]
        )
        sampled = stratified_sample(windows, width, cfg["dataset.seed"])
        os.makedirs(lay.dir("dataset"), exist_ok=True)
        write_window_store(sampled, lay.path("dataset", f"windows_w{width}.jsonl"))
        results = {mode: split_windows(sampled, cfg.split_spec(mode)) for mode in cfg.split_modes}
        _write_text(
            lay.path("dataset", f"splits_w{width}.json"),
            split_manifest_text(sampled, results),
        )
        entry = {"windows": len(windows), "sampled": len(sampled)}
        for mode, result in sorted(results.items()):
            entry[mode] = {
                "train": len(result.train),
                "val": len(result.val),
                "test": len(result.test),
            }
        counts[f"w{width}"] = entry
    return counts


def _load_run_parts(cfg: PipelineConfig, lay: Layout, width: int, mode: str):
    store = load_window_store(lay.path("dataset", f"windows_w{width}.jsonl"))
    manifest = read_split_manifest(_read_text(lay.path("dataset", f"splits_w{width}.json")))
    if mode not in manifest:
        raise StageInputError(
            f"split manifest for width {width} has no {mode!r} entry; rerun the dataset stage"
        )
    parts = manifest[mode]
    return store, {name: [store[i] for i in parts[name]] for name in ("train", "val", "test")}


def _stage_train(cfg: PipelineConfig, lay: Layout) -> dict:
    taxonomy = load_taxonomy(lay.path("canonical", "taxonomy.csv"))
    counts: dict = {}
    for width, mode in _run_names(cfg):
        _, parts = _load_run_parts(cfg, lay, width, mode)
        train_wins, val_wins = parts["train"], parts["val"]
        if not train_wins or not val_wins:
            raise ValueError(
                f"width {width} {mode} split has an empty train or val part; "
                "use a larger cohort or different split fractions"
            )
        if cfg["dataset.oversample"]:
            target = median_class_count(train_wins)
            train_wins = oversample_minority(train_wins, target, seed=cfg["dataset.seed"])
        normalizer = fit_normalizer(train_wins)
        train_data = windows_to_arrays(apply_normalizer(train_wins, normalizer), taxonomy)
        val_data = windows_to_arrays(apply_normalizer(val_wins, normalizer), taxonomy)
        params = init_params(
            N_CHANNELS,
            cfg["train.hidden_size"],
            len(taxonomy.level2_classes),
            seed=cfg["train.seed"],
            dropout=cfg["train.dropout"],
            pooling=cfg["train.pooling"],
        )
        best, history = train(
            params, train_data, val_data, cfg.train_config(), cfg.loss_config()
        )
        os.makedirs(lay.dir("train"), exist_ok=True)
        save_checkpoint(
            best,
            lay.path("train", f"checkpoint_w{width}_{mode}.json"),
            seed=cfg["train.seed"],
            taxonomy_hash=taxonomy.content_hash(),
            config={
                "width": width,
                "split_mode": mode,
                "hidden_size": cfg["train.hidden_size"],
                "batch_size": cfg["train.batch_size"],
                "learning_rate": cfg["train.learning_rate"],
                "weight_decay": cfg["train.weight_decay"],
                "max_epochs": cfg["train.max_epochs"],
                "lambda1": cfg["loss.lambda1"],
                "lambda2": cfg["loss.lambda2"],
                "alpha": cfg["loss.alpha"],
                "gamma": cfg["loss.gamma"],
            },
        )
        _write_text(
            lay.path("train", f"history_w{width}_{mode}.json"),
            json.dumps(history, sort_keys=True, indent=2) + "\n",
        )
        _write_text(
            lay.path("train", f"normalizer_w{width}_{mode}.json"),
            normalizer_to_json(normalizer) + "\n",
        )
        scored = [h for h in history if "val_acc_l2" in h]
        counts[f"w{width}_{mode}"] = {
            "epochs": len(history),
            "train_windows": len(train_wins),
            "val_windows": len(val_wins),
            "best_val_acc_l2": max((h["val_acc_l2"] for h in scored), default=None),
            "diverged": any(h.get("diverged") for h in history),
        }
    return counts


def _stage_eval(cfg: PipelineConfig, lay: Layout) -> dict:
    taxonomy = load_taxonomy(lay.path("canonical", "taxonomy.csv"))
    counts: dict = {}
    trend_rows: list[tuple[int, str, str, float]] = []
    for width, mode in _run_names(cfg):
        params, _ = load_checkpoint(lay.path("train", f"checkpoint_w{width}_{mode}.json"))
        normalizer = normalizer_from_json(
            _read_text(lay.path("train", f"normalizer_w{width}_{mode}.json"))
        )
        _, parts = _load_run_parts(cfg, lay, width, mode)
        test_wins = parts["test"]
        if not test_wins:
            raise ValueError(
                f"width {width} {mode} split has an empty test part; "
                "use a larger cohort or different split fractions"
            )
        report = evaluate_run(
            params,
            apply_normalizer(test_wins, normalizer),
            taxonomy,
            width=width,
            split=mode,
        )
        os.makedirs(lay.dir("eval"), exist_ok=True)
        _write_text(lay.path("eval", f"report_w{width}_{mode}.json"), report_to_json(report))
        _write_text(
            lay.path("eval", f"confusion_l1_w{width}_{mode}.csv"),
            confusion_to_csv(report.confusion_l1, taxonomy.level1_classes),
        )
        _write_text(
            lay.path("eval", f"confusion_l2_w{width}_{mode}.csv"),
            confusion_to_csv(report.confusion_l2, taxonomy.level2_classes),
        )
        for metric in (
            "accuracy_l1",
            "macro_f1_l1",
            "accuracy_l2",
            "macro_f1_l2",
            "hierarchy_consistency",
        ):
            trend_rows.append((width, mode, metric, getattr(report, metric)))
        counts[f"w{width}_{mode}"] = {
            "n_windows": report.n_windows,
            "accuracy_l1": report.accuracy_l1,
            "accuracy_l2": report.accuracy_l2,
            "macro_f1_l2": report.macro_f1_l2,
        }
    _write_text(lay.path("eval", "trends.csv"), trend_csv(trend_rows))
    return counts


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in label.lower())


def _stage_viz(cfg: PipelineConfig, lay: Layout) -> dict:
    band = cfg["viz.band"]
    with open(lay.path("imputed", "imputed.csv"), encoding="utf-8") as fh:
        days = read_aligned_csv(fh)
    with open(lay.path("aligned", "profiles.csv"), encoding="utf-8") as fh:
        profiles = read_profiles_csv(fh)
    user_days: dict[str, dict] = {}
    user_profiles: dict[str, dict] = {}
    for (user, day), minutes in days.items():
        user_days.setdefault(user, {})[day] = minutes
    for (user, day), profile in profiles.items():
        user_profiles.setdefault(user, {})[day] = profile
    activities = sorted(
        {
            m.schedule_label
            for minutes in days.values()
            for m in minutes
            if m.schedule_label is not None
        }
    )
    os.makedirs(lay.dir("viz"), exist_ok=True)
    entries: list[tuple[str, str, str]] = []
    skipped_activities = 0
    for activity in activities:
        sets = []
        for user in sorted(user_days):
            try:
                sets.append(
                    activity_metrics(
                        user, activity, user_days[user], user_profiles.get(user, {})
                    )
                )
            except ValueError:
                continue
        try:
            baseline = group_baseline(sets, activity)
        except ValueError:
            skipped_activities += 1
            continue
        for metric_set in sets:
            if any(metric_set.value(m) is None for m in
                   ("pulse_per_min", "pulse_to_min_ratio", "pulse_to_max_ratio")):
                continue
            filename = f"radar_{metric_set.user_id}_{_slug(activity)}.svg"
            save_radar(
                render_radar(metric_set, baseline, band=band),
                lay.path("viz", filename),
            )
            entries.append((metric_set.user_id, activity, filename))
    _write_text(lay.path("viz", "index.csv"), radar_index_csv(entries))
    return {
        "charts": len(entries),
        "activities": len(activities) - skipped_activities,
        "skipped_activities": skipped_activities,
    }


_STAGE_FUNCS = {
    "synth": _stage_synth,
    "ingest": _stage_ingest,
    "align": _stage_align,
    "impute": _stage_impute,
    "dataset": _stage_dataset,
    "train": _stage_train,
    "eval": _stage_eval,
    "viz": _stage_viz,
}


def _stored_report(path: str) -> dict | None:
    if not os.path.exists(path):
        return None
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


def _write_report(lay: Layout, stage: str, payload: dict) -> None:
    _write_text(
        lay.report_path(stage), json.dumps(payload, sort_keys=True, indent=2) + "\n"
    )


def run_stage(stage: str, cfg: PipelineConfig, out_dir: str, *, force: bool = False) -> int:
    lay = Layout(out_dir)
    missing = [p for p in stage_inputs(stage, cfg, lay) if not os.path.exists(p)]
    if missing:
        raise StageInputError(
            f"stage {stage}: missing input {missing[0]} (run the earlier stages first)"
        )
    cfg_hash = stage_config_hash(stage, cfg)
    outputs = stage_outputs(stage, cfg, lay)
    report_path = lay.report_path(stage)
    if outputs and all(os.path.exists(p) for p in outputs):
        stored = _stored_report(report_path)
        if stored is not None and stored.get("config_hash") == cfg_hash:
            _write_report(
                lay,
                stage,
                {
                    "stage": stage,
                    "counts": stored.get("counts", {}),
                    "duration_s": 0.0,
                    "config_hash": cfg_hash,
                    "no_op": True,
                },
            )
            print(f"[{stage}] up to date, skipped")
            return EXIT_OK
        if stored is not None and not force:
            raise StaleConfigError(
                f"stage {stage}: outputs in {out_dir} were built with config hash "
                f"{stored.get('config_hash', '?')[:12]} but the current config hashes to "
                f"{cfg_hash[:12]}; pass --force to rebuild"
            )
    start = time.perf_counter()
    counts = _STAGE_FUNCS[stage](cfg, lay)
    duration = time.perf_counter() - start
    _write_report(
        lay,
        stage,
        {
            "stage": stage,
            "counts": counts,
            "duration_s": round(duration, 3),
            "config_hash": cfg_hash,
            "no_op": False,
        },
    )
    print(f"[{stage}] done in {duration:.1f}s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harforge",
        description="Wearable stream pipeline: synthesis, fusion, imputation, "
        "windowing, training, evaluation and charts.",
    )
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument(
        "--config",
        default=None,
        help=f"flat key=value config file (default: ${CONFIG_ENV_VAR} if set)",
    )
    parser.add_argument("--out", default="artifacts", help="artifact directory")
    parser.add_argument(
        "--seed", type=int, default=None, help="override every stage seed at once"
    )
    parser.add_argument(
        "--width",
        action="append",
        type=int,
        default=None,
        help="window width in minutes; repeat for several (overrides dataset.widths)",
    )
    parser.add_argument(
        "--split",
        action="append",
        choices=("temporal", "user"),
        default=None,
        help="split mode; repeat for both (overrides split.modes)",
    )
    parser.add_argument(
        "--force", action="store_true", help="rebuild even if outputs exist with a different config"
    )
    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    values: dict[str, str] = {}
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        if not os.path.exists(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        values.update(parse_config_text(_read_text(config_path)))
    if args.seed is not None:
        for key in ("cohort.seed", "dataset.seed", "split.seed", "train.seed"):
            values[key] = str(args.seed)
    if args.width:
        values["dataset.widths"] = ",".join(str(w) for w in dict.fromkeys(args.width))
    if args.split:
        values["split.modes"] = ",".join(dict.fromkeys(args.split))
    return PipelineConfig(values)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = _resolve_config(args)
        if args.stage == "pipeline":
            for stage in STAGE_ORDER:
                code = run_stage(stage, cfg, args.out, force=args.force)
                if code != EXIT_OK:
                    return code
            return EXIT_OK
        return run_stage(args.stage, cfg, args.out, force=args.force)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except StageInputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except StaleConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_STALE
    except Exception as err:  # surface a one-line reason, not a traceback
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR


def console_main() -> None:
    sys.exit(main())
