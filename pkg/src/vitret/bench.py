"""JSON-driven sweep runner, timing/memory probes and report emission."""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ModelConfig
from .data import DatasetContainer, load_dataset, synthetic_dataset
from .families import FAMILIES, canonical_attribute, family_of, parameter_count

log = logging.getLogger(__name__)

PROTOCOL_BATCH_SIZE = 4
PROTOCOL_EPOCHS = 50
FRAMES_PER_FILE = 20
THROUGHPUT_FILE_COUNTS = (1, 100, 1000, 10000)

# published ratios shown next to measured ones
REFERENCE_FPS_RATIOS = {
    ("ret", "lstm"): "1.21x (ReT vs LSTM, full 101-class subset)",
    ("vit_ret", "lstm"): "2x / 2.24x / 1.98x / 1.98x at 1 / 100 / 1000 / 10000 files (ViT-ReT vs ResNet50-LSTM)",
}
REFERENCE_MEMORY_RATIO = "1.10x (ResNet50-LSTM / ViT-ReT)"


# ---------------------------------------------------------------- measurement

_STATUS = Path("/proc/self/status")
_CLEAR_REFS = Path("/proc/self/clear_refs")


def _read_status() -> tuple[int, int] | None:
    """``(VmRSS, VmHWM)`` in kB, or None when /proc is unavailable."""
    try:
        rss = hwm = None
        for line in _STATUS.read_text().splitlines():
            if line.startswith("VmRSS:"):
                rss = int(line.split()[1])
            elif line.startswith("VmHWM:"):
                hwm = int(line.split()[1])
        return (rss, hwm) if rss is not None and hwm is not None else None
    except OSError:
        return None


def _reset_peak() -> bool:
    try:
        _CLEAR_REFS.write_text("5")
        return True
    except OSError:
        return False


@dataclass(eq=False)
class _Frame:
    baseline_kb: int | None
    peak_kb: int
    resettable: bool


_ACTIVE: list[_Frame] = []


@dataclass
class Measurement:
    phase: str
    start: float
    end: float
    seconds: float
    memory_mb: float | None


def measure(phase: str, action: Callable, *args, **kwargs):
    """Run ``action`` and return ``(result, Measurement)``.

    Memory is the peak resident-set growth during the action, read from the
    kernel's high-water mark (reset on entry). Nested measurements stay
    independent: an inner reset first hands the current peak to every
    enclosing frame. Without /proc the memory field is None.
    """
    status = _read_status()
    if status is not None:
        for outer in _ACTIVE:
            outer.peak_kb = max(outer.peak_kb, status[1])
        resettable = _reset_peak()
        status = _read_status() or status
        frame = _Frame(status[0], status[0] if resettable else status[1], resettable)
    else:
        frame = _Frame(None, 0, False)
    _ACTIVE.append(frame)
    start = time.perf_counter()
    try:
        result = action(*args, **kwargs)
    finally:
        end = time.perf_counter()
        _ACTIVE.remove(frame)
        after = _read_status()
    memory_mb = None
    if frame.baseline_kb is not None and after is not None:
        if frame.resettable:
            peak = max(frame.peak_kb, after[1])
        else:
            peak = after[0]
        for outer in _ACTIVE:
            outer.peak_kb = max(outer.peak_kb, peak)
        memory_mb = max(0, peak - frame.baseline_kb) / 1024.0
    return result, Measurement(phase, start, end, end - start, memory_mb)


# ---------------------------------------------------------------- records


@dataclass
class BenchRecord:
    family: str
    dataset: str
    phase: str  # "create" | "train" | "throughput"
    seconds: float
    memory_mb: float | None = None
    loss: float | None = None
    accuracy: float | None = None
    files: int | None = None
    fps: float | None = None
    run: int | None = None
    attribute: str = ""
    value: str = ""
    params: int | None = None
    config: dict = field(default_factory=dict)
    error: str = ""


CSV_COLUMNS = [f.name for f in fields(BenchRecord)]
_FLOAT_COLUMNS = {"seconds", "memory_mb", "loss", "accuracy", "fps"}
_INT_COLUMNS = {"files", "run", "params"}


def _csv_cell(name, value):
    if value is None:
        return ""
    if name == "config":
        return json.dumps(value, sort_keys=True)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(records: list[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            row = asdict(r)
            writer.writerow([_csv_cell(c, row[c]) for c in CSV_COLUMNS])


def read_csv(path) -> list[BenchRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kwargs = {}
            for name in CSV_COLUMNS:
                raw = row.get(name, "")
                if name == "config":
                    kwargs[name] = json.loads(raw) if raw else {}
                elif name in _FLOAT_COLUMNS:
                    kwargs[name] = float(raw) if raw else None
                elif name in _INT_COLUMNS:
                    kwargs[name] = int(raw) if raw else None
                else:
                    kwargs[name] = raw
            if kwargs["seconds"] is None:
                kwargs["seconds"] = 0.0
            records.append(BenchRecord(**kwargs))
    return records


# ---------------------------------------------------------------- test config


@dataclass
class TestGroup:
    model: str
    attribute: str
    values: list


@dataclass
class DatasetSpec:
    name: str
    synthetic: dict | None = None
    path: str | None = None

    def load(self, defaults: ModelConfig) -> DatasetContainer:
        if self.path is not None:
            return load_dataset(self.path)
        opts = dict(self.synthetic or {})
        return synthetic_dataset(
            num_classes=opts.pop("classes", defaults.categories),
            samples_per_class=opts.pop("samples", 60),
            T=opts.pop("T", defaults.sequence_length),
            H=opts.pop("H", defaults.image_height),
            W=opts.pop("W", defaults.image_width),
            seed=opts.pop("seed", 0),
            **opts,
        )


@dataclass
class TestConfig:
    __test__ = False  # not a pytest class

    defaults: ModelConfig
    datasets: list[DatasetSpec]
    tests: list[TestGroup]
    seed: int = 0
    output_dir: str = "results"
    throughput_repetitions: int = 1
    split: float = 0.8

    @classmethod
    def from_dict(cls, data: dict) -> "TestConfig":
        unknown = set(data) - {"defaults", "dataset", "seed", "output_dir", "tests",
                               "throughput_repetitions", "split"}
        if unknown:
            raise ValueError(f"unknown tests.json keys: {sorted(unknown)}")
        base = {"batch_size": PROTOCOL_BATCH_SIZE, "epochs": PROTOCOL_EPOCHS}
        base.update(data.get("defaults", {}))
        defaults = ModelConfig.from_dict(base)

        raw_ds = data.get("dataset", {"synthetic": {}})
        raw_ds = raw_ds if isinstance(raw_ds, list) else [raw_ds]
        datasets = []
        for i, d in enumerate(raw_ds):
            if ("synthetic" in d) == ("path" in d):
                raise ValueError(f"dataset block {i} needs exactly one of 'synthetic' or 'path'")
            name = d.get("name") or (Path(d["path"]).stem if "path" in d else f"synthetic{i}")
            datasets.append(DatasetSpec(name, d.get("synthetic"), d.get("path")))

        tests = []
        for i, t in enumerate(data.get("tests", [])):
            try:
                family, attribute, values = t["model"], t["attribute"], t["values"]
            except KeyError as e:
                raise ValueError(f"test {i} missing key {e}") from None
            attr = canonical_attribute(family, attribute)
            if not isinstance(values, list) or not values:
                raise ValueError(f"test {i} ({family}.{attribute}) needs a nonempty value list")
            for v in values:
                try:
                    defaults.with_updates(**{attr: v})
                except (TypeError, ValueError) as e:
                    raise ValueError(f"test {i}: invalid {attr}={v!r}: {e}") from None
            tests.append(TestGroup(family, attr, list(values)))
        return cls(defaults, datasets, tests, int(data.get("seed", 0)), str(data.get("output_dir", "results")),
                   int(data.get("throughput_repetitions", 1)), float(data.get("split", 0.8)))

    @classmethod
    def load(cls, path) -> "TestConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- runs


def throughput_bench(model, dataset, repetitions: int = 3, file_counts=THROUGHPUT_FILE_COUNTS,
                     frames_per_file: int = FRAMES_PER_FILE, batch_size: int = 1, seed: int = 0,
                     dataset_name: str = "", run: int | None = None) -> list[BenchRecord]:
    """Forward-only prediction timing on random subsets of ``dataset``.

    ``dataset`` is a DatasetContainer (frames are prepared for the model's
    family) or an array of already-prepared model inputs. Counts above the
    dataset size are capped to it. One warm-up batch runs first and is not
    timed; the reported duration is the median over ``repetitions``.
    """
    fam = family_of(model)
    if isinstance(dataset, DatasetContainer):
        n = len(dataset)

        def inputs(idx):
            return fam.prepare(np.stack([dataset.samples[i].frames for i in idx]).astype(np.float64))
    else:
        arr = np.asarray(dataset, dtype=np.float64)
        n = len(arr)

        def inputs(idx):
            return arr[idx]
    if n == 0:
        raise ValueError("throughput needs a nonempty dataset")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    counts = sorted({min(int(c), n) for c in file_counts})
    rng = np.random.default_rng(seed)
    fam.forward(inputs(np.arange(min(batch_size, n))), model)  # warm-up
    records = []
    for count in counts:
        idx = rng.choice(n, size=count, replace=False)
        batches = [inputs(idx[i:i + batch_size]) for i in range(0, count, batch_size)]

        def predict():
            for b in batches:
                fam.forward(b, model)

        times = []
        mem = None
        for _ in range(repetitions):
            _, m = measure("throughput", predict)
            times.append(m.seconds)
            if m.memory_mb is not None:
                mem = m.memory_mb if mem is None else max(mem, m.memory_mb)
        seconds = statistics.median(times)
        fps = count * frames_per_file / seconds if seconds > 0 else math.inf
        records.append(BenchRecord(fam.name, dataset_name, "throughput", seconds, mem, files=count, fps=fps,
                                   run=run, params=parameter_count(model)))
    return records


def _run_one(family: str, cfg: ModelConfig, train, valid, full, seed: int, dataset_name: str, run: int,
             attribute: str, value, repetitions: int) -> tuple[list[BenchRecord], float]:
    fam = FAMILIES[family]
    tag = dict(dataset=dataset_name, run=run, attribute=attribute, value=str(value), config=cfg.to_dict())
    records = []
    model, m = measure("create", fam.create, train.frame_shape, len(train.class_names), cfg, seed)
    params = parameter_count(model)
    records.append(BenchRecord(family, phase="create", seconds=m.seconds, memory_mb=m.memory_mb,
                               params=params, **tag))
    (_, history), m = measure("train", fam.train, train, valid, cfg, seed, model=model)
    last = history[-1] if history else None
    if last is None:
        loss, acc = math.inf, None
    elif last.val_loss is not None:
        loss, acc = last.val_loss, last.val_accuracy
    else:
        loss, acc = last.loss, last.accuracy
    records.append(BenchRecord(family, phase="train", seconds=m.seconds, memory_mb=m.memory_mb, loss=loss,
                               accuracy=acc, files=len(train), params=params, **tag))
    tput = throughput_bench(model, full, repetitions, file_counts=(len(full),), seed=seed,
                            frames_per_file=full.frame_shape[0], dataset_name=dataset_name, run=run)
    for r in tput:
        r.attribute, r.value, r.config = attribute, str(value), cfg.to_dict()
    records += tput
    return records, loss


def run_tests(config: TestConfig) -> list[BenchRecord]:
    """Sweep every test group with carry-forward of the loss-minimizing value.

    Within a dataset block each family keeps its own current configuration;
    after a sweep the best value (ties to the smaller value) is fixed for later
    sweeps. Every block starts again from the original defaults.
    """
    records: list[BenchRecord] = []
    run = 0
    for spec in config.datasets:
        full = spec.load(config.defaults)
        train, valid = full.split(config.split, seed=config.seed)
        current = {name: config.defaults for name in FAMILIES}
        for group in config.tests:
            results = []
            for value in group.values:
                cfg = current[group.model].with_updates(**{group.attribute: value})
                log.info("run %d: %s %s=%s on %s", run, group.model, group.attribute, value, spec.name)
                try:
                    recs, loss = _run_one(group.model, cfg, train, valid, full, config.seed, spec.name, run,
                                          group.attribute, value, config.throughput_repetitions)
                except Exception as e:  # one bad configuration must not stop the matrix
                    log.warning("run %d failed: %s", run, e)
                    recs, loss = [BenchRecord(group.model, spec.name, "train", 0.0, run=run,
                                              attribute=group.attribute, value=str(value),
                                              config=cfg.to_dict(), error=f"{type(e).__name__}: {e}")], math.inf
                records += recs
                if not math.isnan(loss):
                    results.append((loss, value))
                run += 1
            finite = [r for r in results if math.isfinite(r[0])]
            if finite:
                best = min(finite, key=lambda r: (r[0], r[1]))[1]
                current[group.model] = current[group.model].with_updates(**{group.attribute: best})
    return records


# ---------------------------------------------------------------- reports


def _fmt(x, spec=".4f"):
    if x is None:
        return "-"
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return format(x, spec)


def _table(title: str, header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = "+".join("-" * (w + 2) for w in widths)
    out = [title, line]
    out.append("|".join(f" {h:<{w}} " for h, w in zip(header, widths)))
    out.append(line)
    for r in rows:
        out.append("|".join(f" {str(c):<{w}} " for c, w in zip(r, widths)))
    out.append(line)
    return "\n".join(out)


def _best_run(recs: list[BenchRecord]) -> int | None:
    trains = [r for r in recs if r.phase == "train" and not r.error and r.loss is not None]
    if not trains:
        return None
    return min(trains, key=lambda r: (r.loss, r.run if r.run is not None else -1)).run


def summarize(records: list[BenchRecord]) -> str:
    """Plain-text comparison tables: loss/accuracy, timing, fps and memory."""
    by_dataset: dict[str, dict[str, list[BenchRecord]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        by_dataset[r.dataset][r.family].append(r)
    parts = []
    for ds_name in sorted(by_dataset):
        fams = by_dataset[ds_name]
        chosen = {}
        for fam in sorted(fams):
            best = _best_run(fams[fam])
            chosen[fam] = [r for r in fams[fam] if best is None or r.run == best]
        label = ds_name or "(unnamed)"

        rows = []
        for fam, recs in chosen.items():
            train = next((r for r in recs if r.phase == "train"), None)
            setting = f"{train.attribute}={train.value}" if train and train.attribute else "-"
            rows.append([fam, setting, _fmt(train.loss if train else None),
                         _fmt(train.accuracy if train else None)])
        parts.append(_table(f"[{label}] Loss and accuracy (best run)", ["model", "setting", "loss", "accuracy"], rows))

        rows = []
        for fam, recs in chosen.items():
            train = next((r for r in recs if r.phase == "train"), None)
            tput = [r for r in recs if r.phase == "throughput"]
            biggest = max(tput, key=lambda r: r.files or 0) if tput else None
            rows.append([fam, _fmt(train.seconds if train else None, ".3f"),
                         _fmt(biggest.seconds if biggest else None, ".4f"),
                         str(biggest.files) if biggest else "-"])
        parts.append(_table(f"[{label}] Timing (s)", ["model", "training", "throughput", "files"], rows))

        counts = sorted({r.files for recs in chosen.values() for r in recs if r.phase == "throughput"})
        fps = {}
        for fam, recs in chosen.items():
            for r in recs:
                if r.phase == "throughput":
                    fps[(fam, r.files)] = r.fps
        rows = [[fam] + [_fmt(fps.get((fam, c)), ".2f") for c in counts] for fam in chosen]
        parts.append(_table(f"[{label}] Throughput (fps)", ["model"] + [f"{c} files" for c in counts], rows))
        for (a, b), ref in REFERENCE_FPS_RATIOS.items():
            shared = [c for c in counts if fps.get((a, c)) and fps.get((b, c))]
            if shared:
                ratios = ", ".join(f"{fps[(a, c)] / fps[(b, c)]:.2f}x@{c}" for c in shared)
                parts.append(f"measured {a}/{b} fps ratio: {ratios}; published reference: {ref}")

        mem = {}
        rows = []
        for fam, recs in chosen.items():
            create = next((r for r in recs if r.phase == "create"), None)
            mem[fam] = create.memory_mb if create else None
            rows.append([fam, _fmt(mem[fam], ".2f"), str(create.params) if create and create.params else "-"])
        parts.append(_table(f"[{label}] Memory at model creation (MB)", ["model", "memory", "parameters"], rows))
        if mem.get("vit_ret") and mem.get("lstm"):
            parts.append(f"measured lstm/vit_ret memory ratio: {mem['lstm'] / mem['vit_ret']:.2f}x; "
                         f"published reference: {REFERENCE_MEMORY_RATIO}")

        failed = [r for recs in fams.values() for r in recs if r.error]
        for r in failed:
            parts.append(f"FAILED run {r.run} ({r.family} {r.attribute}={r.value}): {r.error}")
    return "\n\n".join(parts) + "\n"


def emit_reports(records: list[BenchRecord], out_dir) -> tuple[Path, Path]:
    """Write ``results.csv`` and ``summary.txt`` into ``out_dir`` (overwriting)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    txt_path = out / "summary.txt"
    write_csv(records, csv_path)
    txt_path.write_text(summarize(records))
    return csv_path, txt_path
