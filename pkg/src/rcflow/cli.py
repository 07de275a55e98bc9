"""Command-line client for the rcflow service.

The CLI is a thin client: every compute command builds a request, posts it to
the service (an in-process instance by default, or a remote one via
``--server``), and writes the files the service returns into ``--out-dir``.
``rcflow serve`` hosts the same service over the network.

Exit codes: 0 success, 2 usage/config error, 3 runtime numeric failure.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

import httpx

USAGE_ERROR = 2
NUMERIC_ERROR = 3

# keys in a --config file that belong to the command, not the experiment spec
COMMAND_KEYS = {"axis", "lambda_values", "beta_values", "n_outer_values",
                "n_inner_values", "estimator", "count", "name"}


class CliError(Exception):
    def __init__(self, message: str, code: int = USAGE_ERROR):
        super().__init__(message)
        self.code = code


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x != ""]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _add_common_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with experiment spec fields; flags override")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--n-r", type=int, dest="n_r")
    p.add_argument("--n-t", type=int, dest="n_t")
    p.add_argument("--channel", type=str, help='channel model JSON, e.g. \'{"kind": "clustered", "n_paths": 3}\'')
    p.add_argument("--trials", type=int)
    p.add_argument("--snr", type=_float_list, help="comma-separated SNR list in dB")
    p.add_argument("--alpha", type=_float_list, help="comma-separated pilot density list")
    p.add_argument("--lambda", type=float, dest="lam", help="model-time schedule exponent")
    p.add_argument("--beta", type=float, help="rectification schedule exponent")
    p.add_argument("--n-outer", type=int, dest="n_outer")
    inner = p.add_mutually_exclusive_group()
    inner.add_argument("--n-inner", type=int, dest="n_inner")
    inner.add_argument("--adaptive", action="store_true", help="noise-adaptive inner step count")
    p.add_argument("--prior", type=str, help='"analytic" or a weight-file path')
    p.add_argument("--snr-convention", choices=["pilot", "channel"], dest="snr_convention")
    p.add_argument("--parallel", type=int, help="worker pool width (default: available parallelism)")
    p.add_argument("--server", type=str, help="remote service URL (default: run in-process)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcflow", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate and save a channel dataset")
    gen.add_argument("--config", type=Path)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out-dir", type=Path, default=Path("."))
    gen.add_argument("--n-r", type=int, dest="n_r")
    gen.add_argument("--n-t", type=int, dest="n_t")
    gen.add_argument("--channel", type=str)
    gen.add_argument("--count", type=int)
    gen.add_argument("--name", type=str, help="output dataset filename")
    gen.add_argument("--server", type=str)

    run_p = sub.add_parser("run", help="run the solver over trials and emit result tables")
    _add_common_spec_flags(run_p)

    base_p = sub.add_parser("baseline", help="run a classical estimator over the same trials")
    _add_common_spec_flags(base_p)
    base_p.add_argument("--estimator", choices=["lmmse", "least-squares"], default=None)

    sweep_p = sub.add_parser("sweep", help="grid evaluation along one axis family")
    _add_common_spec_flags(sweep_p)
    sweep_p.add_argument("--axis", choices=["snr", "alpha", "lambda_beta", "n1_n2"])
    sweep_p.add_argument("--lambda-values", type=_float_list, dest="lambda_values")
    sweep_p.add_argument("--beta-values", type=_float_list, dest="beta_values")
    sweep_p.add_argument("--n-outer-values", type=_int_list, dest="n_outer_values")
    sweep_p.add_argument("--n-inner-values", type=_int_list, dest="n_inner_values")

    spec_p = sub.add_parser("spectral", help="per-step spectral radius diagnostics")
    _add_common_spec_flags(spec_p)

    serve_p = sub.add_parser("serve", help="host the HTTP service")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)

    return parser


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return cfg


SPEC_FLAGS = ["seed", "n_r", "n_t", "trials", "snr", "alpha", "beta",
              "n_outer", "prior", "snr_convention", "parallel"]


def _build_spec(args: argparse.Namespace, config: dict) -> dict:
    spec = {k: v for k, v in config.items() if k not in COMMAND_KEYS}
    for name in SPEC_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            spec[name] = value
    if getattr(args, "lam", None) is not None:
        spec["lambda"] = args.lam
    if getattr(args, "n_inner", None) is not None:
        spec["n_inner"] = args.n_inner
    if getattr(args, "adaptive", False):
        spec["n_inner"] = "adaptive"
    if getattr(args, "channel", None) is not None:
        try:
            spec["channel"] = json.loads(args.channel)
        except json.JSONDecodeError as e:
            raise CliError(f"--channel is not valid JSON: {e}")
    return spec


def _client(args: argparse.Namespace) -> httpx.Client:
    server = getattr(args, "server", None)
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette's httpx2 transition notice
        from fastapi.testclient import TestClient

    from .service import create_app

    # in-process client: same HTTP surface as a remote server, no socket
    return TestClient(create_app(), raise_server_exceptions=False)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code >= 400:
        try:
            detail = response.json()
        except ValueError:
            detail = {"detail": response.text}
        code = NUMERIC_ERROR if detail.get("error") == "numeric" else USAGE_ERROR
        raise CliError(f"service error ({response.status_code}): {detail.get('detail')}", code)
    return response.json()


def _write_files(files: dict, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, payload in sorted(files.items()):
        target = out_dir / name
        if payload["kind"] == "binary":
            target.write_bytes(base64.b64decode(payload["content"]))
        else:
            # bytes write preserves the CSV's RFC-4180 CRLF endings everywhere
            target.write_bytes(payload["content"].encode("utf-8"))
        written.append(target)
    return written


def _print_cells(summary: dict) -> None:
    for cell in summary.get("cells", []):
        print(f"  snr={cell['snr_db']:g} dB  alpha={cell['alpha']:g}  mean NMSE = {cell['mean_nmse_db']:.3f} dB")


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    config = _load_config(getattr(args, "config", None))
    with _client(args) as client:
        if args.command == "gen-data":
            spec = {k: v for k, v in config.items() if k not in ("axis",)}
            for name in ("seed", "n_r", "n_t", "count", "name"):
                value = getattr(args, name, None)
                if value is not None:
                    spec[name] = value
            if getattr(args, "channel", None) is not None:
                try:
                    spec["channel"] = json.loads(args.channel)
                except json.JSONDecodeError as e:
                    raise CliError(f"--channel is not valid JSON: {e}")
            body = _post(client, "/datasets/generate", {"spec": spec})
            written = _write_files(body["files"], args.out_dir)
            s = body["summary"]
            print(f"generated {s['count']} samples, mean |h|^2 = {s['mean_entry_power']:.4f}")
            for path in written:
                print(f"wrote {path}")
            return 0

        spec = _build_spec(args, config)
        if args.command == "run":
            body = _post(client, "/experiments/run", {"spec": spec})
        elif args.command == "baseline":
            estimator = args.estimator or config.get("estimator", "lmmse")
            body = _post(client, "/experiments/baseline", {"spec": spec, "estimator": estimator})
        elif args.command == "sweep":
            axis = args.axis or config.get("axis")
            if axis is None:
                raise CliError("sweep requires --axis (or an 'axis' key in the config file)")
            payload = {"spec": spec, "axis": axis}
            for key in ("lambda_values", "beta_values", "n_outer_values", "n_inner_values"):
                value = getattr(args, key, None)
                if value is None:
                    value = config.get(key)
                if value is not None:
                    payload[key] = value
            body = _post(client, "/experiments/sweep", payload)
        elif args.command == "spectral":
            body = _post(client, "/diagnostics/spectral", {"spec": spec})
        else:  # pragma: no cover - argparse enforces the choices
            raise CliError(f"unknown command {args.command!r}")

        written = _write_files(body["files"], args.out_dir)
        _print_cells(body["summary"])
        for path in written:
            print(f"wrote {path}")
        return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return USAGE_ERROR if e.code not in (0, None) else 0
    try:
        return _dispatch(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except httpx.HTTPError as e:
        print(f"error: cannot reach service: {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
