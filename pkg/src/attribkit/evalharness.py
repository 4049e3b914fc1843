"""Metrics, confusion analysis, and the experiment sweeps (pool-size sweep,
robustness attacks, augmentation generation), with JSON/CSV report emission."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .attribution import (
    AttributionConfig,
    KnownPrompt,
    Prompt,
    PromptOrigin,
    RankScheme,
    attribute,
    make_scorer,
    validate_model_set,
)
from .detrng import combine, hstr
from .errors import (
    AttribError,
    EmptyInput,
    InvalidParam,
    LengthMismatch,
    PromptUnavailable,
    UnknownLabel,
)
from .imagecore import AttackConfig, apply_attack, load_image, save_image
from .synthmodels import SyntheticRegistrySource

PROMPT_MODES = ("natural", "registry", "registry-lossy", "caption")


@dataclass(frozen=True)
class DatasetItem:
    path: str
    label: str
    prompt: Optional[str] = None


@dataclass(frozen=True)
class LabeledDataset:
    """Manifest-backed test set; paths resolve against ``root``."""

    items: tuple
    models: tuple
    root: Path

    def __post_init__(self):
        if len(self.items) == 0:
            raise EmptyInput("dataset must contain at least one item")
        known = set(self.models)
        for item in self.items:
            if item.label not in known:
                raise UnknownLabel(f"label {item.label!r} not in model set")

    def __len__(self) -> int:
        return len(self.items)

    def resolve(self, item: DatasetItem) -> Path:
        return self.root / item.path

    @classmethod
    def load(cls, manifest_path, models: Optional[Sequence[str]] = None) -> "LabeledDataset":
        manifest = Path(manifest_path)
        items = []
        with manifest.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                items.append(
                    DatasetItem(path=row["path"], label=row["label"], prompt=row.get("prompt"))
                )
        if not items:
            raise EmptyInput(f"empty manifest: {manifest}")
        if models is None:
            models = sorted({item.label for item in items})
        return cls(items=tuple(items), models=validate_model_set(models), root=manifest.parent)

    def write_manifest(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for item in self.items:
                row = {"path": item.path, "label": item.label}
                if item.prompt is not None:
                    row["prompt"] = item.prompt
                fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_model: dict  # model -> {recall, precision, f1, undefined}
    confusion: tuple  # rows = truth, cols = prediction, model order
    n_items: int
    models: tuple
    timing: Optional[dict] = None
    config: Optional[dict] = None
    errors: tuple = field(default_factory=tuple)

    def to_dict(self, include_volatile: bool = True) -> dict:
        d = {
            "accuracy": self.accuracy,
            "n_items": self.n_items,
            "models": list(self.models),
            "per_model": {m: dict(v) for m, v in self.per_model.items()},
            "confusion": [list(row) for row in self.confusion],
            "errors": [dict(e) for e in self.errors],
            "config": dict(self.config) if self.config else None,
        }
        if include_volatile:
            d["timing"] = dict(self.timing) if self.timing else None
            d["created_unix"] = int(time.time())
        return d

    def to_json(self, include_volatile: bool = True) -> str:
        return json.dumps(self.to_dict(include_volatile), sort_keys=True, indent=1)


def compute_metrics(truth: Sequence[str], pred: Sequence[str], models: Sequence[str]) -> EvalReport:
    """Accuracy, per-model recall/precision/F1, and the confusion matrix.

    Zero-denominator recalls/precisions yield 0.0 and are listed in that
    model's ``undefined`` field; F1 is 0.0 when recall + precision is 0.
    """
    if len(truth) != len(pred):
        raise LengthMismatch(f"{len(truth)} truth labels vs {len(pred)} predictions")
    if len(truth) == 0:
        raise EmptyInput("need at least one (truth, pred) pair")
    model_set = validate_model_set(models)
    index = {m: i for i, m in enumerate(model_set)}
    k = len(model_set)
    confusion = [[0] * k for _ in range(k)]
    for t, p in zip(truth, pred):
        if t not in index:
            raise UnknownLabel(f"truth label {t!r} not in model set")
        if p not in index:
            raise UnknownLabel(f"predicted label {p!r} not in model set")
        confusion[index[t]][index[p]] += 1
    n = len(truth)
    accuracy = sum(confusion[i][i] for i in range(k)) / n
    per_model = {}
    for m, i in index.items():
        tp = confusion[i][i]
        truth_count = sum(confusion[i])
        pred_count = sum(confusion[r][i] for r in range(k))
        undefined = []
        if truth_count > 0:
            recall = tp / truth_count
        else:
            recall, undefined = 0.0, undefined + ["recall"]
        if pred_count > 0:
            precision = tp / pred_count
        else:
            precision, undefined = 0.0, undefined + ["precision"]
        if recall + precision > 0:
            f1 = 2.0 * recall * precision / (recall + precision)
        else:
            f1, undefined = 0.0, undefined + ["f1"]
        per_model[m] = {
            "recall": recall,
            "precision": precision,
            "f1": f1,
            "undefined": undefined,
        }
    return EvalReport(
        accuracy=accuracy,
        per_model=per_model,
        confusion=tuple(tuple(row) for row in confusion),
        n_items=n,
        models=model_set,
    )


@dataclass(frozen=True)
class EvalSetup:
    """Per-run attribution configuration for the harness."""

    gamma: int = 100
    scheme: RankScheme = RankScheme.BEST
    method: str = "spectral"
    seed: int = 2023
    prompt_mode: str = "natural"
    models: Optional[tuple] = None
    workers: int = 1
    skip_errors: bool = False

    def __post_init__(self):
        if self.prompt_mode not in PROMPT_MODES:
            raise InvalidParam(f"prompt_mode must be one of {PROMPT_MODES}")
        if self.workers < 1:
            raise InvalidParam("workers must be >= 1")

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "scheme": self.scheme.value,
            "method": self.method,
            "seed": self.seed,
            "prompt_mode": self.prompt_mode,
            "models": list(self.models) if self.models else None,
            "workers": self.workers,
            "skip_errors": self.skip_errors,
        }


def _prompt_source_for(item: DatasetItem, setup: EvalSetup, registry, caption_source):
    if setup.prompt_mode == "natural":
        return KnownPrompt(item.prompt)
    if setup.prompt_mode in ("registry", "registry-lossy"):
        if registry is None:
            raise InvalidParam("registry prompt mode needs a registry")
        return SyntheticRegistrySource(registry)
    if caption_source is None:
        raise InvalidParam("caption prompt mode needs a caption source")
    return caption_source


def run_experiment(
    dataset: LabeledDataset,
    setup: EvalSetup,
    *,
    backend,
    registry=None,
    caption_source=None,
    extractor=None,
    attack: Optional[AttackConfig] = None,
    memo: Optional[dict] = None,
) -> EvalReport:
    """Attribute every dataset item and aggregate metrics.

    The attack, when given, is applied to the test image only; candidate
    pools are regenerated clean. Note that in registry prompt modes an
    attacked image no longer hashes to its registry entry, so those runs
    surface PromptUnavailable errors; use natural prompts for robustness runs.

    Per-item failures raise unless ``setup.skip_errors`` is set, in which case
    they are recorded as error rows and excluded from the metrics.
    """
    models = setup.models if setup.models else dataset.models
    config = AttributionConfig(
        gamma=setup.gamma, scheme=setup.scheme, method=setup.method, seed=setup.seed
    )
    if memo is None:
        memo = {}
    scorer = make_scorer(setup.method, extractor=extractor, memo=memo)

    def run_item(index: int):
        item = dataset.items[index]
        t0 = time.perf_counter()
        image = load_image(dataset.resolve(item))
        if attack is not None:
            image = apply_attack(image, attack)
        source = _prompt_source_for(item, setup, registry, caption_source)
        result = attribute(
            image, models, config, backend=backend, prompt_source=source, scorer=scorer
        )
        return result.best, (time.perf_counter() - t0) * 1e3

    outcomes = [None] * len(dataset)

    def guarded(index: int):
        try:
            return run_item(index)
        except (AttribError, OSError) as exc:
            if not setup.skip_errors:
                raise
            return exc

    if setup.workers > 1:
        with ThreadPoolExecutor(max_workers=setup.workers) as pool:
            outcomes = list(pool.map(guarded, range(len(dataset))))
    else:
        outcomes = [guarded(i) for i in range(len(dataset))]

    truth, pred, per_ms, errors = [], [], [], []
    for index, outcome in enumerate(outcomes):
        item = dataset.items[index]
        if isinstance(outcome, Exception):
            errors.append(
                {"index": index, "path": item.path, "error": f"{type(outcome).__name__}: {outcome}"}
            )
            continue
        best, ms = outcome
        truth.append(item.label)
        pred.append(best)
        per_ms.append(ms)

    if not truth:
        raise EmptyInput("all items failed; nothing to score")
    metrics = compute_metrics(truth, pred, models)
    timing = {
        "per_sample_mean_ms": sum(per_ms) / len(per_ms),
        "total_s": sum(per_ms) / 1e3,
    }
    config_echo = setup.as_dict()
    config_echo["attack"] = attack.label() if attack else None
    return replace(metrics, timing=timing, config=config_echo, errors=tuple(errors))


def gamma_sweep(
    dataset: LabeledDataset,
    setup: EvalSetup,
    gammas: Sequence[int],
    **kwargs,
) -> list:
    """One full run per pool size; pools are reused by prefix across runs."""
    if len(gammas) == 0:
        raise InvalidParam("gamma grid must be non-empty")
    if list(gammas) != sorted(gammas) or len(set(gammas)) != len(gammas):
        raise InvalidParam("gamma grid must be strictly ascending")
    memo = kwargs.pop("memo", None)
    if memo is None:
        memo = {}
    results = {}
    # run the largest pool first so smaller runs slice cached pool features
    for gamma in sorted(gammas, reverse=True):
        results[gamma] = run_experiment(
            dataset, replace(setup, gamma=gamma), memo=memo, **kwargs
        )
    return [(gamma, results[gamma]) for gamma in gammas]


def robustness_sweep(
    dataset: LabeledDataset,
    setup: EvalSetup,
    attacks: Sequence[AttackConfig],
    **kwargs,
) -> list:
    """Attack each test image before attribution; candidates stay clean."""
    memo = kwargs.pop("memo", None)
    if memo is None:
        memo = {}
    return [
        (attack, run_experiment(dataset, setup, attack=attack, memo=memo, **kwargs))
        for attack in attacks
    ]


def augment_pool(
    dataset: LabeledDataset,
    n_per_image: int,
    backend,
    out_dir,
    seed: int = 2023,
    caption_source=None,
) -> LabeledDataset:
    """Expand a dataset by regenerating images from each item's true model.

    Prompts come from the manifest when present, otherwise from the caption
    source. Generated items inherit the source item's label. With
    ``n_per_image`` 0 the dataset is returned unchanged.
    """
    if n_per_image < 0:
        raise InvalidParam("n_per_image must be >= 0")
    if n_per_image == 0:
        return dataset
    out = Path(out_dir)
    (out / "aug").mkdir(parents=True, exist_ok=True)
    aug_base = combine(hstr("augment"), seed)
    old_items = [
        DatasetItem(path=str(dataset.resolve(i).resolve()), label=i.label, prompt=i.prompt)
        for i in dataset.items
    ]
    new_items = []
    for index, item in enumerate(dataset.items):
        if item.prompt is not None:
            prompt = Prompt(item.prompt, PromptOrigin.NATURAL)
        elif caption_source is not None:
            prompt = caption_source.invert(load_image(dataset.resolve(item)))
        else:
            raise PromptUnavailable(f"item {index} has no prompt and no caption source given")
        images = backend.generate(item.label, prompt, n_per_image, combine(aug_base, index))
        for j, img in enumerate(images):
            rel = f"aug/{index:05d}_{j:03d}_{item.label}.png"
            save_image(img, out / rel)
            new_items.append(DatasetItem(path=rel, label=item.label, prompt=prompt.text))
    augmented = LabeledDataset(
        items=tuple(old_items + new_items), models=dataset.models, root=out
    )
    augmented.write_manifest(out / "manifest.jsonl")
    return augmented


def write_reports_csv(rows: Sequence[tuple], models: Sequence[str], path) -> None:
    """Flat CSV mirror of the report tables: one row per (label, report)."""
    header = ["run", "acc"]
    for section in ("recall", "precision", "f1"):
        header += [f"{section}:{m}" for m in models]
    lines = [",".join(header)]
    for label, report in rows:
        cells = [str(label), f"{report.accuracy:.6f}"]
        for section in ("recall", "precision", "f1"):
            cells += [f"{report.per_model[m][section]:.6f}" for m in models]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
