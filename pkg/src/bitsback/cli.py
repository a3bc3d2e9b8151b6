"""Command-line front end.

    bitsback compress   --model M.json --input data.bbd --output out.bbc
    bitsback decompress --model M.json --input out.bbc --output data.bbd
    bitsback bench      --model M.json [--input data.bbd] [--output bench.csv]
    bitsback stats      --model M.json --input data.bbd
    bitsback sample     --model M.json --count N --output data.bbd

Exit codes: 0 ok, 2 format error, 3 model mismatch, 4 insufficient init bits.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from typing import NamedTuple, Optional

import numpy as np

from . import bbans, codecs, container, models, rans, vrans
from .bbans import CodingConfig, FallbackWarmup, InsufficientInitBits, IntegrityError, RandomBits
from .container import BatchHeader, FormatError

EXIT_OK, EXIT_FORMAT, EXIT_MISMATCH, EXIT_INIT = 0, 2, 3, 4
BENCH_LANES = (1, 16, 256, 4096)
BENCH_FIELDS = ["K", "symbols", "repeats", "seconds_mean", "seconds_std", "us_per_symbol",
                "symbols_per_s", "speedup_vs_k1", "bits_per_symbol", "naive_bits",
                "benford_bits", "roundtrip_ok", "scalar_match"]


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


class JobSpec(NamedTuple):
    command: str
    model: str
    input: Optional[str]
    output: Optional[str]
    prec: rans.Precisions
    r_q: int
    r_post: Optional[int]
    lanes: int
    flatten: str
    init: object
    seed: int
    report: str
    method: str
    count: int
    repeats: int
    elbo_samples: int


def parse_init(text, seed=0):
    """'random:N[:SEED]' or 'fallback:NAME'."""
    parts = text.split(":")
    if parts[0] == "random" and len(parts) in (2, 3):
        s = int(parts[2]) if len(parts) == 3 else seed
        return RandomBits(int(parts[1]), s)
    if parts[0] == "fallback" and len(parts) in (1, 2):
        return FallbackWarmup(parts[1] if len(parts) == 2 else "uniform")
    raise argparse.ArgumentTypeError(f"bad --init value {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="bitsback", description="Bits-back ANS compressor")
    p.add_argument("command", choices=["compress", "decompress", "bench", "stats", "sample"])
    p.add_argument("--model", required=True, help="JSON model spec")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--precisions", default=None, help="RS,RT,R (default: model spec or 64,32,16)")
    p.add_argument("--rq", type=int, default=None, help="latent grid bits (default: model spec or 16)")
    p.add_argument("--r-post", type=int, default=None, help="posterior index precision")
    p.add_argument("--lanes", type=int, default=1)
    p.add_argument("--flatten", choices=["naive", "benford"], default="naive")
    p.add_argument("--init", default="random:0:0", help="random:N:SEED | fallback:NAME")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", choices=["json", "csv", "text"], default="text")
    p.add_argument("--method", choices=["auto", "bbans", "hier", "bitswap"], default="auto")
    p.add_argument("--count", type=int, default=65536, help="symbols (bench) or data (sample)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--elbo-samples", type=int, default=1000)
    return p


def _spec_defaults(path):
    try:
        with open(path) as f:
            spec = json.load(f)
    except (OSError, ValueError):
        return {}
    return spec if isinstance(spec, dict) else {}


def job_from_args(a) -> JobSpec:
    spec = _spec_defaults(a.model)
    text = a.precisions or spec.get("precisions", "64,32,16")
    if isinstance(text, (list, tuple)):
        text = ",".join(str(v) for v in text)
    r_q = a.rq if a.rq is not None else int(spec.get("r_q", 16))
    try:
        prec = rans.parse_precisions(text)
        init = parse_init(a.init, a.seed)
    except (ValueError, argparse.ArgumentTypeError) as e:
        raise CliError(str(e), EXIT_FORMAT) from None
    return JobSpec(a.command, a.model, a.input, a.output, prec, r_q, a.r_post, a.lanes,
                   a.flatten, init, a.seed, a.report, a.method, a.count, a.repeats,
                   a.elbo_samples)


def load_model(path):
    try:
        with open(path) as f:
            spec = json.load(f)
        return spec, models.model_from_spec(spec)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CliError(f"cannot load model spec {path}: {e}", EXIT_FORMAT) from None


def _read(path):
    if path is None:
        raise CliError("--input is required", EXIT_FORMAT)
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise CliError(str(e), EXIT_FORMAT) from None


def _write(path, data: bytes):
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    with open(path, "wb") as f:
        f.write(data)


def read_dataset(path, model):
    try:
        data = container.unpack_dataset(_read(path))
    except FormatError as e:
        raise CliError(str(e), EXIT_FORMAT) from None
    if len(data) and data.shape[1] != model.obs_dim:
        raise CliError(f"dataset has {data.shape[1]} dims, model expects {model.obs_dim}",
                       EXIT_FORMAT)
    if len(data) and data.max() >= model.alphabet():
        raise CliError("symbol outside the model's alphabet", EXIT_FORMAT)
    return data.reshape(len(data), model.obs_dim)


def config_for(job: JobSpec):
    return CodingConfig(job.prec, job.r_q, job.r_post, job.lanes, job.method)


def render(d: dict, fmt):
    if fmt == "json":
        return json.dumps(d, indent=2, sort_keys=True)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(d))
        w.writeheader()
        w.writerow(d)
        return buf.getvalue().rstrip("\n")
    return "\n".join(f"{k}: {v}" for k, v in d.items())


def cmd_compress(job: JobSpec):
    spec, model = load_model(job.model)
    data = read_dataset(job.input, model)
    cfg = config_for(job)
    try:
        words, report = bbans.encode_batch(data, model, job.init, cfg, job.flatten,
                                           elbo_samples=job.elbo_samples)
    except InsufficientInitBits as e:
        hint = bbans.min_init_bits(data, model, cfg, job.init.seed)
        raise CliError(f"{e}; try --init random:{hint}:{job.init.seed}", EXIT_INIT) from None
    except ValueError as e:
        raise CliError(str(e), EXIT_FORMAT) from None
    fallback = isinstance(job.init, FallbackWarmup)
    header = BatchHeader(cfg.prec.r_s, cfg.prec.r_t, cfg.lanes, job.flatten,
                         models.spec_hash(spec), len(data),
                         "fallback" if fallback else "random",
                         report.switch_index if fallback else job.init.count,
                         0 if fallback else job.init.seed,
                         cfg.prec.r, cfg.r_q, cfg.posterior_precision, cfg.method)
    blob = container.pack_batch(header, words)
    _write(job.output, blob)
    d = report.as_dict()
    d["container_bytes"] = len(blob)
    if job.output not in (None, "-"):
        print(render(d, job.report))
    return d


def cmd_decompress(job: JobSpec):
    spec, model = load_model(job.model)
    try:
        h, words = container.unpack_batch(_read(job.input))
    except FormatError as e:
        raise CliError(str(e), EXIT_FORMAT) from None
    if h.model_hash != models.spec_hash(spec):
        raise CliError("model spec does not match the one used to compress", EXIT_MISMATCH)
    cfg = CodingConfig(rans.Precisions(h.r_s, h.r_t, h.r), h.r_q, h.r_post, h.K, h.method)
    if h.init_tag == "fallback":
        init, switch = FallbackWarmup(), h.init_param
    else:
        init, switch = RandomBits(h.init_param, h.seed), 0
    try:
        data = bbans.decode_batch(words, model, init, h.count, cfg, h.mode, switch)
    except (IntegrityError, ValueError, InsufficientInitBits) as e:
        raise CliError(f"corrupt container: {e}", EXIT_FORMAT) from None
    _write(job.output, container.pack_dataset(data.reshape(h.count, model.obs_dim)))
    return data


def _bench_stream(job, model):
    """Symbol stream and quantized weights for the bench workload."""
    r = job.prec.r
    if isinstance(model, models.CategoricalModel) and model.r <= r:
        w = np.asarray(model.weights, dtype=np.int64) << (r - model.r)
        if job.input is None:
            return model.sample(job.count, job.seed).reshape(-1)[:job.count], w
    if job.input is not None:
        s = read_dataset(job.input, model).reshape(-1)
    else:
        s = models.sample_dataset(model, -(-job.count // model.obs_dim), job.seed).reshape(-1)
    s = s[:job.count]
    if not isinstance(model, models.CategoricalModel) or model.r > r:
        hist = np.bincount(s, minlength=model.alphabet()).astype(np.float64) + 0.5
        w = rans.quantize_probs(hist / hist.sum(), r)
    return s, np.asarray(w, dtype=np.int64)


def _scalar_words(s, w, prec):
    dist = rans.make_quantized([int(x) for x in w], prec.r)
    m = rans.m_init(prec.r_s, prec.r_t)
    for x in s:
        m = rans.push(m, int(x), dist)
    return rans.flatten(m)


def cmd_bench(job: JobSpec):
    """Throughput and rate of the vectorized coder for K in BENCH_LANES."""
    spec, model = load_model(job.model)
    s, w = _bench_stream(job, model)
    n = len(s) - len(s) % max(BENCH_LANES)
    if n == 0:
        raise CliError(f"bench needs at least {max(BENCH_LANES)} symbols", EXIT_FORMAT)
    s = s[:n]
    p = job.prec
    rows = []
    for K in BENCH_LANES:
        codec = codecs.categorical_codec(w, p.r, n=n)
        times = []
        for _ in range(max(1, job.repeats)):
            m = vrans.vinit(K, p.r_s, p.r_t)
            t0 = time.perf_counter()
            m = codec.push(m, s)
            times.append(time.perf_counter() - t0)
        naive = vrans.flatten_naive(m)
        benford = vrans.flatten_benford(m)
        back, out = codec.pop(vrans.unflatten_naive(naive, K, p.r_s, p.r_t))
        ok = bool(np.array_equal(out, s) and back == vrans.vinit(K, p.r_s, p.r_t))
        match = ""
        if K == 1:
            match = bool(np.array_equal(_scalar_words(s, w, p), naive))
        mean, std = float(np.mean(times)), float(np.std(times))
        rows.append({"K": K, "symbols": n, "repeats": len(times), "seconds_mean": mean,
                     "seconds_std": std, "us_per_symbol": 1e6 * mean / n,
                     "symbols_per_s": n / mean, "speedup_vs_k1": 0.0,
                     "bits_per_symbol": len(naive) * p.r_t / n,
                     "naive_bits": len(naive) * p.r_t, "benford_bits": len(benford) * p.r_t,
                     "roundtrip_ok": ok, "scalar_match": match})
    for row in rows:
        row["speedup_vs_k1"] = row["symbols_per_s"] / rows[0]["symbols_per_s"]
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    wr.writeheader()
    wr.writerows(rows)
    _write(job.output, buf.getvalue().encode())
    return rows


def cmd_stats(job: JobSpec):
    spec, model = load_model(job.model)
    data = read_dataset(job.input, model)
    p = job.prec
    out = {"n": len(data), "dims": model.obs_dim}
    exact = isinstance(model, (models.MixtureModel, models.MarkovChainModel,
                               models.CategoricalModel))
    out["h_bits"] = float(sum(model.exact_log_marginal(x) for x in data)) if exact else None
    out["entropy_bits_per_symbol"] = (model.entropy()
                                      if isinstance(model, models.CategoricalModel) else None)
    rng = np.random.default_rng(job.seed)
    out["neg_elbo_bits"] = float(sum(model.elbo(x, job.elbo_samples, rng)[0] for x in data))
    if isinstance(model, models.CategoricalModel) and model.r <= p.r:
        # direct coding from m_init on one lane, compared with the worst-case bound
        w = np.asarray(model.weights, dtype=np.int64) << (p.r - model.r)
        s = data.reshape(-1)
        m = codecs.categorical_codec(w, p.r, n=len(s)).push(vrans.vinit(1, p.r_s, p.r_t), s)
        length = len(vrans.flatten_naive(m)) * p.r_t
        N = len(s)
        eps = rans.epsilon(p.r_s, p.r_t, p.r)
        out.update({"symbols": N, "flattened_bits": length, "epsilon": eps,
                    "bound_bits": out["h_bits"] + N * eps + p.r_s,
                    "bound_slack": out["h_bits"] + N * eps + p.r_s - length,
                    "bound_slack_rt": out["h_bits"] + N * eps + p.r_t - length})
    print(render(out, job.report))
    return out


def cmd_sample(job: JobSpec):
    spec, model = load_model(job.model)
    data = models.sample_dataset(model, job.count, job.seed)
    _write(job.output, container.pack_dataset(data))
    return data


COMMANDS = {"compress": cmd_compress, "decompress": cmd_decompress, "bench": cmd_bench,
            "stats": cmd_stats, "sample": cmd_sample}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        job = job_from_args(args)
        COMMANDS[job.command](job)
    except CliError as e:
        print(f"bitsback: {e}", file=sys.stderr)
        return e.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
