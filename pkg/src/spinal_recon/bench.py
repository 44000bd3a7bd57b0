"""Monte-Carlo reconciliation experiments: SNR sweeps, per-block records, aggregates."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import socket
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import generate_correlated
from .codec import CodecConfig
from .protocol import derive_params
from .transport import StreamEndpoint, run_loopback, run_session

log = logging.getLogger(__name__)

CSV_HEADER = ("snr", "beta_mean", "fer", "iters_mean", "L_mean", "blocks")
DEFAULT_SNRS = (0.0277, 0.069, 0.143)


@dataclass(frozen=True)
class ExperimentConfig:
    snr_list: tuple[float, ...] = DEFAULT_SNRS
    blocks_per_snr: int = 100
    n: int = 1024
    k: int = 4
    c: int = 6
    B: int = 256
    beta_trunc: float = 3.0
    v: int = 32
    w: int = 32
    lam: int = 32
    i_max: int = 50
    v_a: float = 1.0
    master_seed: int = 0
    snr_offset: float = 0.0
    zero_noise: bool = False
    mode: str = "inprocess"
    addr: str = "127.0.0.1:7788"
    workers: int = 1
    out_csv: str | None = None
    out_json: str | None = None
    out_records: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "snr_list", tuple(float(s) for s in self.snr_list))
        if not self.snr_list:
            raise ValueError("empty SNR list")
        if any(not s > 0 for s in self.snr_list):
            raise ValueError("SNRs must be positive")
        if any(s + self.snr_offset <= 0 for s in self.snr_list):
            raise ValueError("snr + snr_offset must stay positive")
        if self.blocks_per_snr < 1:
            raise ValueError("need at least one block per SNR")
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        if self.mode not in ("inprocess", "listen", "connect"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= self.master_seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        # validates n, k, c, B, beta_trunc, v, w
        self.codec()

    def codec(self, s0: int = 0, rng_seed: int = 0) -> CodecConfig:
        return CodecConfig(
            n=self.n, k=self.k, c=self.c, B=self.B, beta_trunc=self.beta_trunc,
            v=self.v, w=self.w, s0=s0, rng_seed=rng_seed,
        )

    def echo(self) -> dict:
        """Configuration fields that determine simulation results."""
        d = dataclasses.asdict(self)
        for key in ("workers", "out_csv", "out_json", "out_records", "addr"):
            d.pop(key)
        d["snr_list"] = list(d["snr_list"])
        return d


def config_hash(echo: dict) -> str:
    canon = json.dumps(echo, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def block_seed(master_seed: int, snr_index: int, block_index: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(snr_index, block_index))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | int(hi) << 32


@dataclass(frozen=True)
class BlockSetup:
    """Everything both parties need to run one block, derived from its seed."""

    seed: int
    snr: float
    params: object
    codec: CodecConfig
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    key_seed: int


def setup_block(cfg: ExperimentConfig, snr_index: int, block_index: int) -> BlockSetup:
    snr = cfg.snr_list[snr_index]
    seed = block_seed(cfg.master_seed, snr_index, block_index)
    data_seed, key_seed, secrets = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(int(secrets)))
    s0 = int(gen.integers(0, 1 << cfg.v))
    t = int(gen.integers(0, 1 << cfg.w))
    codec = cfg.codec(s0=s0, rng_seed=t)
    params = derive_params(snr + cfg.snr_offset, cfg.v_a, codec, cfg.lam, cfg.i_max)
    count = params.samples_needed(params.l_min + (cfg.i_max - 1) * params.pass_increment)
    raw = generate_correlated(count, cfg.v_a, snr, int(data_seed))
    y = raw.x if cfg.zero_noise else raw.y
    return BlockSetup(seed, snr, params, codec, raw.x, y, int(key_seed))


def _record(setup: BlockSetup, snr_index: int, block_index: int, outcome) -> dict:
    return {
        "snr": setup.snr,
        "snr_index": snr_index,
        "block": block_index,
        "seed": setup.seed,
        "success": outcome.success,
        "L": outcome.L,
        "iterations": outcome.iterations,
        "R": outcome.code_rate,
        "beta": outcome.beta_eff,
        "leaked_bits": outcome.leaked_bits,
        "millis": round(outcome.elapsed * 1000.0, 3),
    }


def run_block(cfg: ExperimentConfig, snr_index: int, block_index: int) -> dict:
    setup = setup_block(cfg, snr_index, block_index)
    bob, alice, outcome = run_loopback(
        setup.params, setup.codec, setup.x, setup.y, setup.key_seed, snr=setup.snr
    )
    rec = _record(setup, snr_index, block_index, outcome)
    if outcome.success and not np.array_equal(alice.estimate, bob.key):
        # CRC accepted a wrong key
        log.error("undetected key mismatch at snr=%s block=%d seed=%d", setup.snr, block_index, setup.seed)
        rec["false_accept"] = True
    return rec


def _run_block_args(args):
    return run_block(*args)


def _parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {addr!r}, expected host:port")
    return host, int(port)


def _run_listen(cfg: ExperimentConfig, jobs, ready=None) -> list[dict]:
    """Alice's side of two-process mode: one accepted connection per block."""
    host, port = _parse_addr(cfg.addr)
    records = []
    with socket.create_server((host, port), reuse_port=False) as server:
        if ready is not None:
            ready()
        for snr_index, block_index in jobs:
            setup = setup_block(cfg, snr_index, block_index)
            conn, _ = server.accept()
            endpoint = StreamEndpoint(conn)
            try:
                _, outcome = run_session("alice", endpoint, setup.params, setup.codec, setup.x, snr=setup.snr)
            finally:
                endpoint.close()
            records.append(_record(setup, snr_index, block_index, outcome))
    return records


def _connect(addr: str, timeout: float = 30.0) -> socket.socket:
    host, port = _parse_addr(addr)
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection((host, port))
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)


def _run_connect(cfg: ExperimentConfig, jobs) -> list[dict]:
    """Bob's side of two-process mode."""
    records = []
    for snr_index, block_index in jobs:
        setup = setup_block(cfg, snr_index, block_index)
        endpoint = StreamEndpoint(_connect(cfg.addr))
        try:
            _, outcome = run_session(
                "bob", endpoint, setup.params, setup.codec, setup.y, key_seed=setup.key_seed, snr=setup.snr
            )
        finally:
            endpoint.close()
        records.append(_record(setup, snr_index, block_index, outcome))
    return records


def run_records(cfg: ExperimentConfig, ready=None) -> list[dict]:
    """Per-block records ordered by (snr_index, block_index)."""
    jobs = [(i, b) for i in range(len(cfg.snr_list)) for b in range(cfg.blocks_per_snr)]
    if cfg.mode == "listen":
        return _run_listen(cfg, jobs, ready)
    if cfg.mode == "connect":
        return _run_connect(cfg, jobs)
    args = [(cfg, i, b) for i, b in jobs]
    if cfg.workers == 1:
        return [run_block(*a) for a in args]
    with ProcessPoolExecutor(cfg.workers) as pool:
        return list(pool.map(_run_block_args, args, chunksize=1))


# -- aggregation ------------------------------------------------------------


@dataclass
class SnrStats:
    snr: float
    blocks: int
    failures: int
    beta_sum: float
    beta_min: float
    beta_max: float
    iters_sum: float
    L_sum: float
    wall_time: float
    betas: list = field(default_factory=list, repr=False)
    reference: float | None = None

    @property
    def successes(self) -> int:
        return self.blocks - self.failures

    @property
    def fer(self) -> float:
        return self.failures / self.blocks

    @property
    def beta_mean(self) -> float:
        return self.beta_sum / self.successes if self.successes else math.nan

    @property
    def beta_median(self) -> float:
        return statistics.median(self.betas) if self.betas else math.nan

    @property
    def iters_mean(self) -> float:
        return self.iters_sum / self.blocks

    @property
    def L_mean(self) -> float:
        return self.L_sum / self.blocks

    def merge(self, other: SnrStats) -> SnrStats:
        if other.snr != self.snr:
            raise ValueError("cannot merge different SNR buckets")
        return SnrStats(
            snr=self.snr,
            blocks=self.blocks + other.blocks,
            failures=self.failures + other.failures,
            beta_sum=self.beta_sum + other.beta_sum,
            beta_min=min(self.beta_min, other.beta_min),
            beta_max=max(self.beta_max, other.beta_max),
            iters_sum=self.iters_sum + other.iters_sum,
            L_sum=self.L_sum + other.L_sum,
            wall_time=self.wall_time + other.wall_time,
            betas=self.betas + other.betas,
            reference=self.reference,
        )

    def summary(self) -> dict:
        return {
            "snr": self.snr,
            "blocks": self.blocks,
            "failures": self.failures,
            "fer": self.fer,
            "beta_mean": self.beta_mean,
            "beta_median": self.beta_median,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "iters_mean": self.iters_mean,
            "L_mean": self.L_mean,
            "wall_time": self.wall_time,
            "table1_proposed": self.reference,
        }


@dataclass
class AggregateReport:
    rows: list[SnrStats]

    def row(self, snr: float) -> SnrStats:
        for r in self.rows:
            if r.snr == snr:
                return r
        raise KeyError(snr)

    def merge(self, other: AggregateReport) -> AggregateReport:
        mine = {r.snr: r for r in self.rows}
        for r in other.rows:
            mine[r.snr] = mine[r.snr].merge(r) if r.snr in mine else r
        return AggregateReport(list(mine.values()))


def table1_reference() -> dict[float, tuple[float, float]]:
    """Reference efficiencies in percent: snr -> (proposed, ref18)."""
    text = resources.files(__package__).joinpath("data/table1.csv").read_text()
    return {
        float(row["snr"]): (float(row["proposed"]), float(row["ref18"]))
        for row in csv.DictReader(io.StringIO(text))
    }


def aggregate(records) -> AggregateReport:
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    ref = table1_reference()
    rows: dict[float, SnrStats] = {}
    for rec in records:
        snr = rec["snr"]
        beta = rec["beta"] if rec["success"] else None
        one = SnrStats(
            snr=snr,
            blocks=1,
            failures=0 if rec["success"] else 1,
            beta_sum=beta if beta is not None else 0.0,
            beta_min=beta if beta is not None else math.inf,
            beta_max=beta if beta is not None else -math.inf,
            iters_sum=rec["iterations"],
            L_sum=rec["L"],
            wall_time=rec.get("millis", 0.0) / 1000.0,
            betas=[beta] if beta is not None else [],
            reference=ref[snr][0] / 100.0 if snr in ref else None,
        )
        rows[snr] = rows[snr].merge(one) if snr in rows else one
    return AggregateReport(list(rows.values()))


# -- output -----------------------------------------------------------------


def check_writable(*paths) -> None:
    """Fail early, before any simulation, on output paths that cannot be created."""
    for path in paths:
        if path is None:
            continue
        p = Path(path)
        parent = p.parent if str(p.parent) else Path(".")
        if not parent.is_dir():
            raise OSError(f"{path}: directory {parent} does not exist")
        if p.is_dir() or (p.exists() and not os.access(p, os.W_OK)) or not os.access(parent, os.W_OK):
            raise OSError(f"{path}: not writable")


def _num(x) -> str:
    return repr(float(x))


def write_csv(report: AggregateReport, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(CSV_HEADER)
            for r in report.rows:
                out.writerow([_num(r.snr), _num(r.beta_mean), _num(r.fer), _num(r.iters_mean), _num(r.L_mean), r.blocks])
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "blocks" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def _finite(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


def emit_outputs(report: AggregateReport, cfg: ExperimentConfig, records=None, csv_path=None, json_path=None, records_path=None) -> None:
    csv_path = csv_path or cfg.out_csv
    json_path = json_path or cfg.out_json
    records_path = records_path or cfg.out_records
    if csv_path:
        write_csv(report, csv_path)
    if json_path:
        echo = cfg.echo()
        doc = {
            "config": echo,
            "config_hash": config_hash(echo),
            "rows": [{k: _finite(v) for k, v in r.summary().items()} for r in report.rows],
        }
        try:
            Path(json_path).write_text(json.dumps(doc, indent=2) + "\n")
        except OSError as exc:
            raise OSError(f"{json_path}: {exc.strerror or exc}") from exc
    if records_path and records is not None:
        try:
            with open(records_path, "w") as fh:
                for rec in records:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"{records_path}: {exc.strerror or exc}") from exc


def run_experiment(cfg: ExperimentConfig, ready=None) -> tuple[AggregateReport, list[dict]]:
    """Run every block of the sweep, then write the configured outputs."""
    check_writable(cfg.out_csv, cfg.out_json, cfg.out_records)
    records = run_records(cfg, ready)
    report = aggregate(records)
    emit_outputs(report, cfg, records)
    return report, records
