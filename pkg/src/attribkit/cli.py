"""Command-line interface: attribute / eval / spectra / attack / augment / synth.

Machine-readable output goes to stdout (or the --out path); logs go to
stderr. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import evalharness, spectral, synthmodels
from .attribution import (
    AttributionConfig,
    KnownPrompt,
    RankScheme,
    attribute,
    make_scorer,
)
from .errors import AttribError, InvalidParam, UsageError
from .evalharness import EvalSetup, LabeledDataset, write_reports_csv
from .imagecore import ANALYSIS_SIZE, AttackConfig, AttackKind, apply_attack, load_image, save_image
from .modelgateway import (
    CachingBackend,
    GatewayBackend,
    GatewayClient,
    GatewayConfig,
    PoolCache,
    RemoteCaptionSource,
    RemoteEmbedExtractor,
)
from .synthmodels import (
    DEFAULT_FAMILY_SEED,
    PromptRegistry,
    SyntheticBackend,
    SyntheticRegistrySource,
    make_family,
)

DEFAULTS = {
    "gamma": 100,
    "scheme": "best",
    "extractor": "spectral",
    "seed": 2023,
    "backend": "synthetic",
    "family_seed": DEFAULT_FAMILY_SEED,
    "family_size": 8,
    "workers": os.cpu_count() or 1,
    "timeout_ms": 30_000,
    "retries": 2,
}


def log(message: str) -> None:
    print(message, file=sys.stderr)


@dataclass(frozen=True)
class RunConfig:
    """Resolved run settings; flags override config-file values override defaults."""

    gamma: int
    scheme: RankScheme
    extractor: str
    seed: int
    backend: str
    family_seed: int
    family_size: int
    workers: int
    timeout_ms: int
    retries: int
    api_key: Optional[str] = None
    cache_dir: Optional[str] = None
    models: Optional[tuple] = None
    prompt: Optional[str] = None
    caption_url: Optional[str] = None
    registry: Optional[str] = None
    lossy: bool = False

    def __post_init__(self):
        if self.gamma < 1:
            raise UsageError("--gamma must be >= 1")
        if self.extractor not in ("spectral", "embed", "ssim", "combined"):
            raise UsageError(f"unknown extractor {self.extractor!r}")
        modes = [m for m in (self.prompt, self.caption_url, self.registry) if m]
        if len(modes) > 1:
            raise UsageError("choose exactly one prompt mode (--prompt | --caption-url | --registry)")
        if self.backend != "synthetic" and not self.backend.startswith(("http://", "https://")):
            raise UsageError("--backend must be 'synthetic' or a gateway URL")


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a flat JSON object")
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def parse_config(args: argparse.Namespace) -> RunConfig:
    """Merge flag values, config-file values, and defaults into a RunConfig."""
    file_values = _load_config_file(getattr(args, "config", None))
    merged = dict(DEFAULTS)
    merged.update({k: v for k, v in file_values.items() if k in RunConfig.__dataclass_fields__})
    for key in RunConfig.__dataclass_fields__:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    try:
        scheme = RankScheme.parse(str(merged["scheme"]))
    except InvalidParam as exc:
        raise UsageError(str(exc)) from exc
    models = merged.get("models")
    if isinstance(models, str):
        models = tuple(m.strip() for m in models.split(",") if m.strip())
    elif isinstance(models, (list, tuple)):
        models = tuple(models)
    return RunConfig(
        gamma=int(merged["gamma"]),
        scheme=scheme,
        extractor=str(merged["extractor"]),
        seed=int(merged["seed"]),
        backend=str(merged["backend"]),
        family_seed=int(merged["family_seed"]),
        family_size=int(merged["family_size"]),
        workers=int(merged["workers"]),
        timeout_ms=int(merged["timeout_ms"]),
        retries=int(merged["retries"]),
        api_key=merged.get("api_key"),
        cache_dir=merged.get("cache_dir"),
        models=models,
        prompt=merged.get("prompt"),
        caption_url=merged.get("caption_url"),
        registry=merged.get("registry"),
        lossy=bool(merged.get("lossy", False)),
    )


def _gateway_client(cfg: RunConfig, url: Optional[str] = None) -> GatewayClient:
    return GatewayClient(
        GatewayConfig(
            base_url=url or cfg.backend,
            timeout_ms=cfg.timeout_ms,
            retries=cfg.retries,
            api_key=cfg.api_key,
        )
    )


def _build_backend(cfg: RunConfig):
    if cfg.backend == "synthetic":
        backend = SyntheticBackend(make_family(cfg.family_size, cfg.family_seed))
    else:
        backend = GatewayBackend(_gateway_client(cfg))
    if cfg.cache_dir:
        backend = CachingBackend(backend, PoolCache(cfg.cache_dir))
    return backend


def _build_extractor(cfg: RunConfig):
    if cfg.extractor == "embed":
        if cfg.backend == "synthetic":
            raise UsageError("--extractor embed needs a gateway --backend URL")
        return RemoteEmbedExtractor(_gateway_client(cfg))
    return None  # make_scorer falls back to the spectral extractor


def _registry_for(cfg: RunConfig, lossy: bool) -> PromptRegistry:
    if not cfg.registry:
        raise UsageError("this prompt mode needs --registry PATH")
    return PromptRegistry.load(cfg.registry, lossy_mode=lossy)


def _emit(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, sort_keys=True, indent=1)
    if out is None or out == "-":
        print(text)
    else:
        Path(out).write_text(text + "\n", encoding="utf-8")
        log(f"wrote {out}")


def _cmd_attribute(args) -> int:
    cfg = parse_config(args)
    if not cfg.models:
        raise UsageError("--models is required")
    if cfg.prompt:
        source = KnownPrompt(cfg.prompt)
    elif cfg.caption_url:
        source = RemoteCaptionSource(_gateway_client(cfg, cfg.caption_url))
    elif cfg.registry:
        source = SyntheticRegistrySource(_registry_for(cfg, cfg.lossy))
    else:
        raise UsageError("choose a prompt mode: --prompt | --caption-url | --registry")
    backend = _build_backend(cfg)
    scorer = make_scorer(cfg.extractor, extractor=_build_extractor(cfg), memo={})
    image = load_image(args.image)
    result = attribute(
        image,
        cfg.models,
        AttributionConfig(gamma=cfg.gamma, scheme=cfg.scheme, method=cfg.extractor, seed=cfg.seed),
        backend=backend,
        prompt_source=source,
        scorer=scorer,
    )
    log(f"best model: {result.best}")
    _emit(result.as_dict(), args.out)
    return 0


def _parse_attacks(spec_text: str) -> list:
    kinds = {"blur": AttackKind.GAUSSIAN_BLUR, "jpeg": AttackKind.JPEG_COMPRESSION,
             "resize": AttackKind.RESIZE}
    attacks = []
    for chunk in spec_text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            name, value = chunk.split(":")
            attacks.append(AttackConfig(kinds[name.strip()], float(value)))
        except (ValueError, KeyError, InvalidParam) as exc:
            raise UsageError(f"bad attack spec {chunk!r}: {exc}") from exc
    if not attacks:
        raise UsageError("empty attack list")
    return attacks


def _cmd_eval(args) -> int:
    cfg = parse_config(args)
    dataset = LabeledDataset.load(args.dataset, models=cfg.models)
    prompt_mode = args.prompt_mode
    registry = None
    caption_source = None
    if prompt_mode in ("registry", "registry-lossy"):
        registry = _registry_for(cfg, lossy=prompt_mode == "registry-lossy")
    elif prompt_mode == "caption":
        if not cfg.caption_url:
            raise UsageError("--prompt-mode caption needs --caption-url")
        caption_source = RemoteCaptionSource(_gateway_client(cfg, cfg.caption_url))
    setup = EvalSetup(
        gamma=cfg.gamma,
        scheme=cfg.scheme,
        method=cfg.extractor,
        seed=cfg.seed,
        prompt_mode=prompt_mode,
        models=cfg.models,
        workers=cfg.workers,
        skip_errors=args.skip_errors,
    )
    backend = _build_backend(cfg)
    extractor = _build_extractor(cfg)
    common = dict(
        backend=backend, registry=registry, caption_source=caption_source, extractor=extractor
    )
    models = cfg.models if cfg.models else dataset.models
    if args.sweep_gamma:
        try:
            gammas = [int(g) for g in args.sweep_gamma.split(",") if g.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --sweep-gamma: {exc}") from exc
        results = evalharness.gamma_sweep(dataset, setup, gammas, **common)
        for gamma, report in results:
            log(f"gamma={gamma}: acc={report.accuracy:.4f}")
        payload = {"sweep_gamma": [
            {"gamma": g, "report": r.to_dict()} for g, r in results
        ]}
        rows = [(f"gamma={g}", r) for g, r in results]
    elif args.attacks:
        attacks = _parse_attacks(args.attacks)
        results = evalharness.robustness_sweep(dataset, setup, attacks, **common)
        for attack, report in results:
            log(f"attack={attack.label()}: acc={report.accuracy:.4f}")
        payload = {"attacks": [
            {"attack": a.label(), "report": r.to_dict()} for a, r in results
        ]}
        rows = [(a.label(), r) for a, r in results]
    else:
        report = evalharness.run_experiment(dataset, setup, **common)
        log(f"acc={report.accuracy:.4f} over {report.n_items} items")
        payload = report.to_dict()
        rows = [("run", report)]
    _emit(payload, args.out)
    if args.csv:
        write_reports_csv(rows, models, args.csv)
        log(f"wrote {args.csv}")
    return 0


def _cmd_spectra(args) -> int:
    cfg = parse_config(args)
    dataset = LabeledDataset.load(args.dataset, models=cfg.models)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = args.size
    for model in dataset.models:
        paths = [dataset.resolve(i) for i in dataset.items if i.label == model]
        paths = paths[: args.limit]
        if not paths:
            continue
        spec = spectral.average_spectrum((load_image(p) for p in paths), size=size)
        profile = spectral.raps(spec)
        csv_path = out_dir / f"{model}_raps.csv"
        lines = ["radius,mean_power,count"]
        lines += [
            f"{r},{profile.bins[r]:.10g},{int(profile.counts[r])}"
            for r in range(len(profile.bins))
        ]
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        save_image(spectral.spectrum_heatmap(spec), out_dir / f"{model}_spectrum.png")
        log(f"{model}: {len(paths)} images -> {csv_path.name}, {model}_spectrum.png")
    return 0


def _cmd_attack(args) -> int:
    kinds = {"blur": AttackKind.GAUSSIAN_BLUR, "jpeg": AttackKind.JPEG_COMPRESSION,
             "resize": AttackKind.RESIZE}
    if args.op not in kinds:
        raise UsageError(f"unknown op {args.op!r}")
    try:
        attack = AttackConfig(kinds[args.op], args.param)
    except InvalidParam as exc:
        raise UsageError(str(exc)) from exc
    src = Path(args.in_dir)
    dst = Path(args.out_dir)
    dst.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in sorted(src.iterdir()):
        if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        save_image(apply_attack(load_image(path), attack), dst / f"{path.stem}.png")
        count += 1
    log(f"attacked {count} images with {attack.label()}")
    return 0


def _cmd_augment(args) -> int:
    cfg = parse_config(args)
    dataset = LabeledDataset.load(args.dataset, models=cfg.models)
    backend = _build_backend(cfg)
    caption_source = None
    if cfg.caption_url:
        caption_source = RemoteCaptionSource(_gateway_client(cfg, cfg.caption_url))
    elif cfg.registry:
        caption_source = SyntheticRegistrySource(_registry_for(cfg, cfg.lossy))
    augmented = evalharness.augment_pool(
        dataset, args.n, backend, args.out, seed=cfg.seed, caption_source=caption_source
    )
    log(f"augmented dataset: {len(dataset)} -> {len(augmented)} items at {args.out}")
    return 0


def _cmd_synth_gen(args) -> int:
    cfg = parse_config(args)
    prompts = [
        line.strip()
        for line in Path(args.prompts).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not prompts:
        raise UsageError(f"no prompts in {args.prompts}")
    family = make_family(args.k, cfg.family_seed)
    dataset_seed = args.dataset_seed if args.dataset_seed is not None else cfg.seed
    rows = synthmodels.generate_dataset(args.out, family, prompts, args.per_prompt, dataset_seed)
    meta = {
        "family_seed": cfg.family_seed,
        "k": args.k,
        "dataset_seed": dataset_seed,
        "per_prompt": args.per_prompt,
        "n_items": len(rows),
        "models": [spec.id for spec in family],
    }
    (Path(args.out) / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8"
    )
    log(f"generated {len(rows)} images into {args.out}")
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flat keys matching flag names)")
    p.add_argument("--gamma", type=int, default=None, help="candidate pool size per model")
    p.add_argument("--scheme", default=None, help="ranking scheme: avg | best | avg_best")
    p.add_argument("--extractor", default=None,
                   help="similarity method: spectral | embed | ssim | combined")
    p.add_argument("--seed", type=int, default=None, help="run seed")
    p.add_argument("--backend", default=None, help="'synthetic' or gateway base URL")
    p.add_argument("--family-seed", dest="family_seed", type=int, default=None)
    p.add_argument("--family-size", dest="family_size", type=int, default=None)
    p.add_argument("--cache-dir", dest="cache_dir", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--timeout-ms", dest="timeout_ms", type=int, default=None)
    p.add_argument("--retries", type=int, default=None)
    p.add_argument("--api-key", dest="api_key", default=None)
    p.add_argument("--models", default=None, help="comma-separated model ids")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrib",
        description="Training-free attribution of generated images via regeneration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attribute", help="attribute one image to a candidate model")
    _add_run_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--prompt", default=None, help="known natural prompt text")
    p.add_argument("--caption-url", dest="caption_url", default=None)
    p.add_argument("--registry", default=None, help="prompt registry JSON path")
    p.add_argument("--lossy", action="store_true", default=None,
                   help="registry returns degraded prompts")
    p.add_argument("--out", default="-", help="result JSON path or '-' for stdout")
    p.set_defaults(func=_cmd_attribute)

    p = sub.add_parser("eval", help="evaluate attribution over a labeled dataset")
    _add_run_flags(p)
    p.add_argument("--dataset", required=True, help="manifest.jsonl path")
    p.add_argument("--prompt-mode", dest="prompt_mode", default="natural",
                   choices=evalharness.PROMPT_MODES)
    p.add_argument("--registry", default=None)
    p.add_argument("--caption-url", dest="caption_url", default=None)
    p.add_argument("--out", default="-", help="report JSON path or '-'")
    p.add_argument("--csv", default=None, help="also emit a CSV table")
    p.add_argument("--sweep-gamma", dest="sweep_gamma", default=None,
                   help="comma-separated ascending pool sizes")
    p.add_argument("--attacks", default=None, help="e.g. blur:1.0,jpeg:95,resize:0.5")
    p.add_argument("--skip-errors", dest="skip_errors", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("spectra", help="emit per-model radial profiles and heatmaps")
    _add_run_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--size", type=int, default=ANALYSIS_SIZE)
    p.add_argument("--limit", type=int, default=1000, help="max images per model")
    p.set_defaults(func=_cmd_spectra)

    p = sub.add_parser("attack", help="apply one transform to a directory of images")
    p.add_argument("--op", required=True, help="blur | jpeg | resize")
    p.add_argument("--param", type=float, required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("augment", help="expand a dataset via its true models")
    _add_run_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--n", type=int, required=True, help="generated images per item")
    p.add_argument("--out", required=True)
    p.add_argument("--caption-url", dest="caption_url", default=None)
    p.add_argument("--registry", default=None)
    p.add_argument("--lossy", action="store_true", default=None)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("synth", help="synthetic model family tools")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    g = synth_sub.add_parser("gen", help="emit a labeled synthetic dataset")
    _add_run_flags(g)
    g.add_argument("--k", type=int, default=4, help="family size")
    g.add_argument("--prompts", required=True, help="text file, one prompt per line")
    g.add_argument("--per-prompt", dest="per_prompt", type=int, default=1)
    g.add_argument("--out", required=True)
    g.add_argument("--dataset-seed", dest="dataset_seed", type=int, default=None)
    g.set_defaults(func=_cmd_synth_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        log(f"usage error: {exc}")
        return 2
    except (AttribError, OSError) as exc:
        log(f"error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
