"""Command-line entry point.

Verbs: discover, train, generate, evaluate, label, serve, export.
Every verb accepts --config pointing at a JSON file whose keys override
built-in defaults; explicit flags override the file in turn. Exit codes
are stable: 0 success, 1 validation problem, 2 integrity failure,
3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adapters import SliderActivation
from .composer import GenerationRequest, TimestepGate, generate
from .config import ENV_BIND, bind_address
from .errors import BackendError, IntegrityError, ValidationError
from .imaging import image_to_png
from .manifest import load_manifest
from .workspace import DiscoveryConfig, Workspace

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INTEGRITY = 2
EXIT_BACKEND = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; that code is reserved for integrity here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"config file {p} must hold a JSON object")
    return doc


def _merged(args: argparse.Namespace, file_cfg: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default


_DISCOVERY_KEYS = (
    "prompt", "backend_id", "encoder_id", "oracle_encoder_id", "num_seeds",
    "num_sliders", "rank", "mode", "steps_per_slider", "batch_size", "lr",
    "seed", "capture_timesteps", "eval_probes", "eval_k", "eval_seeds",
)


def _discovery_config(args, file_cfg: dict) -> DiscoveryConfig:
    doc = {k: v for k, v in file_cfg.items() if k in _DISCOVERY_KEYS}
    for key in _DISCOVERY_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if "capture_timesteps" in doc:
        doc["capture_timesteps"] = tuple(doc["capture_timesteps"])
    if "prompt" not in doc:
        raise ValidationError("a prompt is required (flag --prompt or config key \"prompt\")")
    return DiscoveryConfig(**doc)


def _workspace(args, file_cfg: dict, config: DiscoveryConfig | None = None) -> Workspace:
    root = _merged(args, file_cfg, "workspace")
    if not root:
        raise ValidationError("a workspace directory is required (--workspace)")
    return Workspace(root, config=config)


def _parse_slider_flag(raw: str) -> SliderActivation:
    name, sep, value = raw.partition("=")
    if not sep or not name:
        raise ValidationError(f"--slider expects id=scale, got {raw!r}")
    try:
        scale = float(value)
    except ValueError:
        raise ValidationError(f"--slider scale must be a number, got {value!r}") from None
    return SliderActivation(name, scale)


def _stage_progress(stage: str, status: str):
    # diagnostics, not payload: keep stdout clean for hashes and documents
    print(f"[{stage}] {status}", file=sys.stderr, flush=True)


def _cmd_discover(args) -> int:
    file_cfg = _load_config_file(args.config)
    root = _merged(args, file_cfg, "workspace")
    if not root:
        raise ValidationError("a workspace directory is required (--workspace)")
    # resume a stored config untouched unless the caller supplied discovery keys
    has_stored = Path(root, "config.json").exists()
    has_overrides = any(getattr(args, k, None) is not None for k in _DISCOVERY_KEYS) \
        or any(k in file_cfg for k in _DISCOVERY_KEYS)
    config = None if has_stored and not has_overrides else _discovery_config(args, file_cfg)
    ws = Workspace(root, config=config)
    bundle = ws.discover(progress=_stage_progress)
    print(f"manifest {bundle.manifest_hash}")
    return EXIT_OK


def _cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    ws = _workspace(args, file_cfg)
    ws.reset_stage("trained")
    ws.ensure("trained", progress=_stage_progress)
    print(f"manifest {ws.bundle().manifest_hash}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    file_cfg = _load_config_file(args.config)
    root = _merged(args, file_cfg, "manifest") or _merged(args, file_cfg, "workspace")
    if not root:
        raise ValidationError("a manifest directory is required (--manifest)")
    bundle = load_manifest(root)
    from .backends import get_backend

    backend = get_backend(bundle.manifest.backend_id)
    activations = tuple(_parse_slider_flag(raw) for raw in args.slider or ())
    known = {entry.adapter_id for entry in bundle.manifest.sliders}
    for act in activations:
        if act.adapter_id not in known:
            raise ValidationError(f"unknown slider {act.adapter_id!r}; manifest has {sorted(known)}")
    gate = None
    if args.gate_start is not None or args.gate_end is not None:
        start = args.gate_start if args.gate_start is not None else 0
        end = args.gate_end if args.gate_end is not None else backend.schedule.num_steps
        gate = TimestepGate(start, end)
    request = GenerationRequest(
        prompt=args.prompt or bundle.manifest.prompt,
        seed=args.seed,
        activations=activations,
        num_steps=args.steps,
        gate=gate,
    )
    result = generate(backend, request, adapters=bundle.adapters)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(image_to_png(result.image))
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    file_cfg = _load_config_file(args.config)
    ws = _workspace(args, file_cfg)
    if args.force:
        ws.reset_stage("evaluated")
    doc = ws.evaluate(progress=_stage_progress)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_label(args) -> int:
    file_cfg = _load_config_file(args.config)
    ws = _workspace(args, file_cfg)
    labels = ws.label(seeds=tuple(args.seeds), scale=args.scale)
    for adapter_id in sorted(labels):
        print(f"{adapter_id}: {labels[adapter_id]}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    file_cfg = _load_config_file(args.config)
    root = _merged(args, file_cfg, "manifest") or _merged(args, file_cfg, "workspace")
    if not root:
        raise ValidationError("a manifest directory is required (--manifest)")
    host, port = bind_address(args.bind or file_cfg.get("bind"))
    from .service import serve

    print(f"serving {root} on {host}:{port} (override with --bind or {ENV_BIND})")
    serve(root, host=host, port=port, queue_depth=args.queue_depth,
          deadline_seconds=args.deadline)
    return EXIT_OK


def _cmd_export(args) -> int:
    file_cfg = _load_config_file(args.config)
    ws = _workspace(args, file_cfg)
    dest = ws.export(args.dest)
    print(f"exported manifest to {dest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sliderkit", description="discover and drive semantic sliders")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of defaults for this verb")

    p = sub.add_parser("discover", help="sample, decompose, and train sliders")
    common(p)
    p.add_argument("--workspace", help="workspace directory")
    p.add_argument("--prompt")
    p.add_argument("--backend-id", dest="backend_id")
    p.add_argument("--encoder-id", dest="encoder_id")
    p.add_argument("--oracle-encoder-id", dest="oracle_encoder_id")
    p.add_argument("--num-seeds", dest="num_seeds", type=int)
    p.add_argument("--num-sliders", dest="num_sliders", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--mode", choices=("semantic", "output-space", "customization"))
    p.add_argument("--steps-per-slider", dest="steps_per_slider", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("train", help="re-run the training stage of a workspace")
    common(p)
    p.add_argument("--workspace", help="workspace directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="render one image from a manifest")
    common(p)
    p.add_argument("--manifest", help="manifest directory (a workspace root works)")
    p.add_argument("--workspace", help=argparse.SUPPRESS)
    p.add_argument("--prompt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slider", action="append", metavar="ID=SCALE",
                   help="activate a slider; repeatable")
    p.add_argument("--gate-start", dest="gate_start", type=int)
    p.add_argument("--gate-end", dest="gate_end", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", default="out.png")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="run the evaluation stage of a workspace")
    common(p)
    p.add_argument("--workspace", help="workspace directory")
    p.add_argument("--force", action="store_true", help="re-run even if already evaluated")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("label", help="caption sliders and write labels into the manifest")
    common(p)
    p.add_argument("--workspace", help="workspace directory")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("serve", help="serve a manifest over HTTP")
    common(p)
    p.add_argument("--manifest", help="manifest directory (a workspace root works)")
    p.add_argument("--workspace", help=argparse.SUPPRESS)
    p.add_argument("--bind", help=f"host:port (default from {ENV_BIND})")
    p.add_argument("--queue-depth", dest="queue_depth", type=int, default=8)
    p.add_argument("--deadline", type=float, default=60.0)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("export", help="copy the manifest bundle out of a workspace")
    common(p)
    p.add_argument("--workspace", help="workspace directory")
    p.add_argument("--dest", required=True)
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
