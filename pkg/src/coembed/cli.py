"""Command-line client for the coembed service.

All subcommands build a configuration from (defaults < config file < flags)
and send it to the HTTP service: a remote one when --server is given,
otherwise the bundled app mounted in-process. Exit codes: 0 success,
1 partial or runtime failure, 2 invalid configuration.
"""

import argparse
import sys

import httpx

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_CONFIG = 2


def _add_common(parser):
    parser.add_argument("-c", "--config", help="config file (key = value lines)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    for key in ("dataset-root", "cache-dir", "output-dir", "corr-dir"):
        parser.add_argument(f"--{key}", dest=key.replace("-", "_"))
    parser.add_argument("--k", type=int)
    parser.add_argument("--d", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--descriptor", choices=["hks", "gt"])
    parser.add_argument("--mode", choices=["full_full", "full_partial"])
    parser.add_argument("--indexing", choices=["zero_based", "one_based"])


def build_parser():
    parser = argparse.ArgumentParser(prog="coembed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="cache operators, eigenbases, and HKS per shape")
    _add_common(p)
    p.add_argument("--shapes", help="comma-separated shape names (default: shapes of the configured pairs)")

    p = sub.add_parser("couple", help="optimize coupled embeddings for a pair")
    _add_common(p)
    p.add_argument("pair", help="source:target")
    p.add_argument("--method", default="coupled", choices=["coupled", "cqhb_hks", "cqhb_gt"])

    p = sub.add_parser("match-eval", help="match a pair and append geodesic-error rows")
    _add_common(p)
    p.add_argument("pair", help="source:target")
    p.add_argument(
        "--methods",
        default="coupled",
        help="comma-separated subset of coupled,cqhb_hks,cqhb_gt,nn_spectral,nn_hks",
    )

    p = sub.add_parser("segment", help="k-means segmentation in embedding space")
    _add_common(p)
    p.add_argument("name", help="shape name, or source:target for a coupled pair")
    p.add_argument("--clusters", type=int)

    p = sub.add_parser("plot-trace", help="emit the loss trace CSV of a coupled pair")
    _add_common(p)
    p.add_argument("pair", help="source:target")
    p.add_argument("--method", default="coupled", choices=["coupled", "cqhb_hks", "cqhb_gt"])
    p.add_argument("--out", help="write the CSV here instead of stdout")

    p = sub.add_parser("make-demo", help="write a synthetic demo dataset")
    p.add_argument("root", help="target directory")
    p.add_argument("--n", type=int, default=700, help="vertices per shape")
    p.add_argument("--pairs", type=int, default=2, dest="n_pairs")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _config_payload(args):
    from .pipeline import parse_config_file

    mapping = {}
    if args.config:
        mapping.update(parse_config_file(args.config))
    for key in (
        "dataset_root", "cache_dir", "output_dir", "corr_dir",
        "k", "d", "seed", "descriptor", "mode", "indexing",
    ):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    for item in args.overrides:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            raise SystemExit(EXIT_BAD_CONFIG)
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    if "pairs" in mapping and isinstance(mapping["pairs"], str):
        mapping["pairs"] = [p for p in mapping["pairs"].split(",") if p.strip()]
    for key in ("k", "d", "seed", "knn", "max_iters", "clusters"):
        if key in mapping and isinstance(mapping[key], str):
            try:
                mapping[key] = int(mapping[key])
            except ValueError:
                pass  # let the service report it
    return mapping


def _split_pair(text):
    bits = text.split(":")
    if len(bits) != 2 or not bits[0] or not bits[1]:
        print(f"error: expected source:target, got {text!r}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_CONFIG)
    return bits[0], bits[1]


def _client(args):
    if args.server:
        return httpx.Client(base_url=args.server, timeout=None)
    # no server given: mount the app in-process and speak HTTP to it directly
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=False)


def _detail(response):
    try:
        return response.json().get("detail", response.text)
    except ValueError:
        return response.text


def _post(args, endpoint, payload):
    with _client(args) as client:
        response = client.post(endpoint, json=payload)
    if response.status_code in (400, 422):
        print(f"error: invalid config: {_detail(response)}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_CONFIG)
    if response.status_code != 200:
        print(f"error: {_detail(response)}", file=sys.stderr)
        raise SystemExit(EXIT_FAILURE)
    body = response.json()
    for note in body.get("warnings") or []:
        print(f"warning: {note}", file=sys.stderr)
    return body


def _cmd_precompute(args):
    payload = {"config": _config_payload(args)}
    if args.shapes:
        payload["shapes"] = [s.strip() for s in args.shapes.split(",") if s.strip()]
    body = _post(args, "/precompute", payload)
    for entry in body["entries"]:
        state = "up-to-date" if entry["skipped"] else "written"
        print(f"{entry['shape']}: {state} ({entry['path']})")
    for failure in body["failures"]:
        print(f"{failure['shape']}: FAILED: {failure['error']}", file=sys.stderr)
    return EXIT_FAILURE if body["failures"] else EXIT_OK


def _cmd_couple(args):
    source, target = _split_pair(args.pair)
    body = _post(
        args,
        "/couple",
        {"config": _config_payload(args), "source": source, "target": target, "method": args.method},
    )
    status = "converged" if body["converged"] else "max iterations"
    print(
        f"{body['pair_id']} [{body['method']}]: {status} after {body['iterations']} "
        f"iterations, final loss {body['final_total']:.6g}"
    )
    print(f"embeddings: {body['psi_source']} {body['psi_target']}")
    print(f"trace: {body['trace']}")
    return EXIT_OK


def _cmd_match_eval(args):
    source, target = _split_pair(args.pair)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    body = _post(
        args,
        "/match-eval",
        {"config": _config_payload(args), "source": source, "target": target, "methods": methods},
    )
    for row in body["rows"]:
        print(
            f"{row['pair_id']} {row['method']}: geodesic error x100 = "
            f"{row['error_x100']:.4f} ({row['wall_ms']:.0f} ms)"
        )
    if body["skipped"]:
        print(f"skipped methods (no ground truth): {', '.join(body['skipped'])}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _cmd_segment(args):
    payload = {"config": _config_payload(args), "clusters": args.clusters}
    if ":" in args.name:
        payload["source"], payload["target"] = _split_pair(args.name)
    else:
        payload["source"] = args.name
    body = _post(args, "/segment", payload)
    for name, path in body["label_files"].items():
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_plot_trace(args):
    source, target = _split_pair(args.pair)
    body = _post(
        args,
        "/plot-trace",
        {"config": _config_payload(args), "source": source, "target": target, "method": args.method},
    )
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(body["csv"])
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(body["csv"])
    return EXIT_OK


def _cmd_make_demo(args):
    from .pipeline import make_demo_dataset

    pairs = make_demo_dataset(args.root, n=args.n, n_pairs=args.n_pairs, seed=args.seed)
    print(f"wrote {len(pairs)} pairs under {args.root}")
    print("pairs =", ",".join(f"{s}:{t}" for s, t in pairs))
    return EXIT_OK


def _cmd_serve(args):
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


_COMMANDS = {
    "precompute": _cmd_precompute,
    "couple": _cmd_couple,
    "match-eval": _cmd_match_eval,
    "segment": _cmd_segment,
    "plot-trace": _cmd_plot_trace,
    "make-demo": _cmd_make_demo,
    "serve": _cmd_serve,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
