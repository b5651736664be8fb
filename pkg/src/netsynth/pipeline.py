"""End-to-end driver: config, run directory, resumable stages and the final report.

A run directory holds one file per stage output plus ``manifest.json``. Stages
run in the order of ``STAGES``; a stage already marked ``done`` is skipped unless
forced, and forcing a stage resets every later stage as well.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path


from netsynth import __version__
from netsynth.candidate import GeneTrainer, derive_seed
from netsynth.data import DatasetSpec, IngestError, ingest
from netsynth.dimreduce import QuantSpec, quantize
from netsynth.evolve import EvolveConfig, search, write_trace
from netsynth.growprune import LocalSearchConfig, local_search
from netsynth.growprune import write_trace as write_ls_trace
from netsynth.nn import SparseNetwork, TrainConfig, build_network, evaluate, train
from netsynth.predictor import BoostedTreeModel, fit_boosted
from netsynth.qmc import pool_from_sobol
from netsynth.selector import SelectorConfig, load_records, predictor_seed, select_and_fit
from netsynth.space import SearchSpace, load_space, restrict, space_from_dict, general_space

log = logging.getLogger(__name__)

STAGES = ("pool", "samples", "predictor", "global", "local", "final")
MANIFEST_FORMAT = 1
# files each stage writes; forcing a stage deletes them so nothing stale is reused
STAGE_OUTPUTS = {
    "pool": ("pool.json",),
    "samples": ("records.csv",),
    "predictor": ("predictor.json",),
    "global": ("evolve_trace.csv", "gs_network.json", "gs.json"),
    "local": ("ls_trace.csv", "gsls_network.json", "gsls.json"),
    "final": ("report.json", "report.csv", "summary.txt"),
}

# sub-seed tags derived from the master seed
_SEED_TRAINER, _SEED_SELECTOR, _SEED_EVOLVE, _SEED_LOCAL, _SEED_BASELINE = 1, 2, 3, 4, 5


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class LocalStageConfig:
    enabled: bool = True
    search: LocalSearchConfig = field(default_factory=LocalSearchConfig)
    seed_hidden: tuple = (10,)  # starting hidden widths for scheme A


@dataclass(frozen=True)
class RunConfig:
    seed: int
    dataset: DatasetSpec
    space: SearchSpace
    train: TrainConfig
    selector: SelectorConfig
    evolve: EvolveConfig
    local: LocalStageConfig
    baseline: tuple | None  # hidden widths of the dense reference MLP
    precomputed: dict
    raw: dict  # normalized source dict, hashed into the run id
    base_dir: Path = Path(".")

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def run_id(self) -> str:
        return f"run-{self.config_hash[:12]}"


def _read_config_file(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build(cls, section: dict, name: str, **fixed):
    allowed = {f.name for f in fields(cls)} - set(fixed)
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    try:
        return cls(**kwargs, **fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _space(section: dict, base: Path) -> SearchSpace:
    section = dict(section)
    overrides = section.pop("restrict", None)
    try:
        if "file" in section:
            space = load_space(base / section.pop("file"))
        elif "hyperparameters" in section:
            space = space_from_dict({"hyperparameters": section.pop("hyperparameters")})
        else:
            preset = section.pop("preset", "general")
            if preset != "general":
                raise ConfigError(f"[space] unknown preset {preset!r}")
            space = general_space()
        if section:
            raise ConfigError(f"[space] unknown keys: {sorted(section)}")
        return restrict(space, overrides)
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[space] {exc}") from exc


def parse_config(data: dict, base_dir=".", seed: int | None = None) -> RunConfig:
    """Validate a config mapping; ``seed`` overrides the file's master seed."""
    data = json.loads(json.dumps(data))  # deep copy, JSON-normalized
    known = {"seed", "dataset", "space", "train", "selector", "evolve", "local", "baseline"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if seed is not None:
        data["seed"] = int(seed)
    master = data.setdefault("seed", 0)
    if not isinstance(master, int) or master < 0:
        raise ConfigError("seed must be a non-negative integer")
    base = Path(base_dir)

    ds = dict(data.get("dataset", {}))
    precomputed = ds.pop("precomputed", {})
    if not ds:
        raise ConfigError("[dataset] section is required")
    dataset = _build(DatasetSpec, ds, "dataset")

    space = _space(data.get("space", {}), base)
    tcfg = _build(TrainConfig, data.get("train", {}), "train")
    sel = _build(SelectorConfig, data.get("selector", {}), "selector",
                 seed=derive_seed(master, _SEED_SELECTOR))
    evo = _build(EvolveConfig, data.get("evolve", {}), "evolve",
                 seed=derive_seed(master, _SEED_EVOLVE))
    sel_pool = sel.pool_count
    if sel_pool > space.total_size:
        raise ConfigError(f"pool_count {sel_pool} exceeds the {space.total_size} genes of the space")

    loc = dict(data.get("local", {}))
    enabled = bool(loc.pop("enabled", True))
    seed_hidden = tuple(int(v) for v in loc.pop("seed_hidden", (10,)))
    lsc = _build(LocalSearchConfig, loc, "local", seed=derive_seed(master, _SEED_LOCAL), train=tcfg)
    local = LocalStageConfig(enabled, lsc, seed_hidden)

    baseline = data.get("baseline")
    if baseline is not None:
        hidden = baseline.get("hidden") if isinstance(baseline, dict) else None
        if not hidden or any(int(h) < 1 for h in hidden):
            raise ConfigError("[baseline] needs a non-empty 'hidden' list of positive widths")
        baseline = tuple(int(h) for h in hidden)
    return RunConfig(master, dataset, space, tcfg, sel, evo, local, baseline,
                     precomputed, data, base)


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(_read_config_file(path), path.parent, seed)


def bundled_config(name: str = "synthetic") -> Path:
    """Path of a config shipped with the package."""
    return Path(str(resources.files("netsynth") / "configs" / f"{name}.toml"))


# ---------------------------------------------------------------- run directory

def _dump(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _load(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


class RunManifest:
    """Stage statuses and bookkeeping for one run directory."""

    def __init__(self, path: Path, data: dict):
        self.path = path
        self.data = data

    @classmethod
    def open(cls, run_dir: Path, config: RunConfig, fingerprint: str) -> "RunManifest":
        path = run_dir / "manifest.json"
        if path.exists():
            data = _load(path)
            if data.get("config_hash") != config.config_hash:
                raise ConfigError(f"{run_dir} belongs to a different configuration")
            if data.get("dataset_fingerprint") != fingerprint:
                raise ConfigError(f"{run_dir}: dataset content changed since the run started")
            return cls(path, data)
        data = {"format": MANIFEST_FORMAT, "run_id": config.run_id, "master_seed": config.seed,
                "config_hash": config.config_hash, "space_hash": config.space.hash(),
                "dataset_fingerprint": fingerprint, "tool_version": __version__,
                "stages": {s: "pending" for s in STAGES}, "errors": {},
                "test_reads": 0, "baseline_test_reads": 0}
        m = cls(path, data)
        m.save()
        return m

    @property
    def stages(self) -> dict:
        return self.data["stages"]

    def save(self) -> None:
        _dump(self.path, self.data)

    def reset_from(self, stage: str) -> None:
        for s in STAGES[STAGES.index(stage):]:
            self.stages[s] = "pending"
            self.data["errors"].pop(s, None)
        self.save()


# ---------------------------------------------------------------- pipeline

def _gene_str(gene) -> str:
    return " ".join(str(int(g)) for g in gene)


class Pipeline:
    def __init__(self, config: RunConfig, run_dir=None, workers: int = 1, force=()):
        self.config = config
        if run_dir is None:
            run_dir = os.environ.get("NETSYNTH_RUN_DIR") or Path("runs") / config.run_id
        self.run_dir = Path(run_dir)
        self.workers = workers
        bad = [s for s in force if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stage(s) to force: {bad}")
        self.force = tuple(force)
        try:
            self.splits, self.fingerprint = ingest(config.dataset, config.base_dir)
        except (OSError, IngestError, ValueError) as exc:
            raise ConfigError(f"[dataset] {exc}") from exc
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest.open(self.run_dir, config, self.fingerprint)
        if self.force:
            first = min(self.force, key=STAGES.index)
            self.manifest.reset_from(first)
            for stage in STAGES[STAGES.index(first):]:
                for name in STAGE_OUTPUTS[stage]:
                    self.path(name).unlink(missing_ok=True)
        precomputed = {str(k): tuple(str(config.base_dir / p) for p in (v["train"], v["validation"], v["test"]))
                       for k, v in config.precomputed.items()}
        self.trainer = GeneTrainer(config.space, self.splits, config.train,
                                   seed=derive_seed(config.seed, _SEED_TRAINER),
                                   precomputed=precomputed)

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def run(self, until: str = "final") -> dict:
        """Run every pending stage up to and including ``until``; returns the stage statuses."""
        if until not in STAGES:
            raise ConfigError(f"unknown stage {until!r}")
        for stage in STAGES[:STAGES.index(until) + 1]:
            if self.manifest.stages[stage] == "done":
                continue
            if stage == "local" and not self.config.local.enabled:
                self.manifest.stages[stage] = "skipped"
                self.manifest.save()
                continue
            if self.manifest.stages[stage] == "skipped":
                continue
            log.info("stage %s", stage)
            reads = self.splits.test_reads
            try:
                getattr(self, f"_stage_{stage}")()
            except Exception as exc:
                self.manifest.stages[stage] = "failed"
                self.manifest.data["errors"][stage] = f"{type(exc).__name__}: {exc}"
                self.manifest.data["test_reads"] += self.splits.test_reads - reads
                self.manifest.save()
                raise StageError(f"stage {stage} failed: {exc}") from exc
            self.manifest.data["test_reads"] += self.splits.test_reads - reads
            self.manifest.stages[stage] = "done"
            self.manifest.data["errors"].pop(stage, None)
            self.manifest.save()
        return dict(self.manifest.stages)

    # -- stages

    def _stage_pool(self):
        cfg = self.config
        pool = pool_from_sobol(cfg.space, cfg.selector.pool_count)
        _dump(self.path("pool.json"), {"space_hash": cfg.space.hash(),
                                       "genes": [list(map(int, g)) for g in pool]})

    def _pool(self) -> list:
        return [tuple(g) for g in _load(self.path("pool.json"))["genes"]]

    def _stage_samples(self):
        select_and_fit(self.config.space, self._pool(), self.trainer, self.config.selector,
                       records_path=self.path("records.csv"), workers=self.workers, fit_last=False)

    def _stage_predictor(self):
        sel = self.config.selector
        records = load_records(self.path("records.csv"))
        model = fit_boosted(records, sel.max_depth, sel.max_stages, predictor_seed(sel, len(records)))
        model.save(self.path("predictor.json"))

    def _stage_global(self):
        model = BoostedTreeModel.load(self.path("predictor.json"))
        trace = []
        gene, reward = search(self.config.space, model, self.config.evolve, trace)
        write_trace(self.path("evolve_trace.csv"), trace)
        res = self.trainer.finalize(gene)
        res.network.save(self.path("gs_network.json"))
        row = self._row(gene, res.inference_network, res.val_accuracy, res.test_accuracy)
        row["predicted_accuracy"] = reward
        _dump(self.path("gs.json"), row)

    def _stage_local(self):
        cfg = self.config
        gs = _load(self.path("gs.json"))
        gene = tuple(gs["gene"])
        cand = self.trainer.decode(gene)
        reduced = self.trainer.reduced(gene)
        lsc = cfg.local.search
        if lsc.scheme == "A":
            sizes = [reduced[0].width, *cfg.local.seed_hidden, self.splits.n_classes]
            start = build_network(sizes, "dense_adjacent", seed=derive_seed(lsc.seed, 0))
        else:
            start = SparseNetwork.load(self.path("gs_network.json"))
        res = local_search(start, reduced, lsc, quant=cand.quant)
        write_ls_trace(self.path("ls_trace.csv"), res.trace)
        res.network.save(self.path("gsls_network.json"))
        test_acc = self.trainer.test_accuracy(gene, res.network)
        qnet = quantize(res.network, cand.quant)
        row = self._row(gene, qnet, res.val_accuracy, test_acc)
        row["best_iteration"] = res.best_iteration
        row["scheme"] = lsc.scheme
        _dump(self.path("gsls.json"), row)

    def _row(self, gene, qnet, val_acc, test_acc) -> dict:
        cand = self.trainer.decode(gene)
        return {"gene": list(map(int, gene)), "val_accuracy": float(val_acc),
                "test_accuracy": float(test_acc), "params": qnet.param_count(),
                "layer_sizes": list(qnet.layer_sizes), "dr_method": cand.dr.method,
                "dr_ratio": cand.dr.ratio, "quant_bits": cand.quant.bits}

    def _baseline_row(self) -> dict:
        cfg = self.config
        s = self.splits
        sizes = [s.train.width, *cfg.baseline, s.n_classes]
        seed = derive_seed(cfg.seed, _SEED_BASELINE)
        net = build_network(sizes, "dense_adjacent", seed=seed)
        net, val_acc = train(net, s.train, s.validation, replace(cfg.train, seed=seed))
        test = s.read_test(reference=True)  # counted apart from the synthesis reads
        self.manifest.data["baseline_test_reads"] += 1
        return {"gene": None, "val_accuracy": float(val_acc), "test_accuracy": evaluate(net, test),
                "params": net.param_count(), "layer_sizes": list(net.layer_sizes),
                "dr_method": "none", "dr_ratio": 1.0, "quant_bits": 32}

    def _stage_final(self):
        rows = {"baseline": None, "gs": None, "gsls": None}
        if self.config.baseline is not None:
            rows["baseline"] = self._baseline_row()
        rows["gs"] = _load(self.path("gs.json"))
        if self.manifest.stages["local"] == "done":
            rows["gsls"] = _load(self.path("gsls.json"))
        report = {"run_id": self.config.run_id, "master_seed": self.config.seed,
                  "space_hash": self.config.space.hash(),
                  "dataset_fingerprint": self.fingerprint,
                  "absent": [k for k, v in rows.items() if v is None], "rows": rows}
        _dump(self.path("report.json"), report)
        _write_curve_csv(self.path("report.csv"), rows, self._ls_trace())
        self.path("summary.txt").write_text(format_summary(report), encoding="utf-8")

    def _ls_trace(self) -> list:
        p = self.path("ls_trace.csv")
        if self.manifest.stages["local"] != "done" or not p.exists():
            return []
        with open(p, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))


def _write_curve_csv(path: Path, rows: dict, ls_trace: list) -> None:
    """Accuracy-vs-parameters points: the report rows plus every local-search snapshot."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "params", "val_accuracy", "test_accuracy"])
    for label, row in rows.items():
        if row is not None:
            w.writerow([label, row["params"], repr(row["val_accuracy"]), repr(row["test_accuracy"])])
    for t in ls_trace:
        if t["changed"] == "True":
            w.writerow([f"ls_iter_{t['iteration']}", t["active_connections"], t["val_accuracy"], ""])
    path.write_text(buf.getvalue(), encoding="utf-8")


def format_summary(report: dict) -> str:
    head = f"{'':<9}{'val acc':>9}{'test acc':>10}{'params':>9}  {'DR method':<16}{'bits':>5}"
    lines = [f"run {report['run_id']} (seed {report['master_seed']})", head, "-" * len(head)]
    names = {"baseline": "baseline", "gs": "GS", "gsls": "GS+LS"}
    for key, row in report["rows"].items():
        if row is None:
            if key != "baseline":
                lines.append(f"{names[key]:<9}{'absent':>9}")
            continue
        lines.append(f"{names[key]:<9}{100 * row['val_accuracy']:>8.2f}%{100 * row['test_accuracy']:>9.2f}%"
                     f"{row['params']:>9}  {row['dr_method']:<16}{row['quant_bits']:>5}")
    return "\n".join(lines) + "\n"


def load_report(run_dir) -> dict:
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise StageError(f"{run_dir}: no report.json; run the final stage first")
    return _load(path)


def recount(run_dir) -> dict:
    """Parameter counts recomputed from the serialized networks (quantized per the gene)."""
    run_dir = Path(run_dir)
    out = {}
    for key, fname in (("gs", "gs_network.json"), ("gsls", "gsls_network.json")):
        meta, net_path = run_dir / f"{key}.json", run_dir / fname
        if not net_path.exists() or not meta.exists():
            continue
        bits = _load(meta)["quant_bits"]
        out[key] = quantize(SparseNetwork.load(net_path), QuantSpec(bits)).param_count()
    return out


def eval_network(pipeline: Pipeline, which: str, split: str = "validation") -> dict:
    """Re-score a saved network on the train or validation split; the test split is off limits."""
    if split not in ("train", "validation"):
        raise ConfigError("eval only scores the train or validation split")
    meta = pipeline.path(f"{which}.json")
    net_path = pipeline.path(f"{which}_network.json")
    if not meta.exists() or not net_path.exists():
        raise StageError(f"{which} outputs missing in {pipeline.run_dir}")
    row = _load(meta)
    reduced = pipeline.trainer.reduced(row["gene"])
    qnet = quantize(SparseNetwork.load(net_path), QuantSpec(row["quant_bits"]))
    ds = reduced[0] if split == "train" else reduced[1]
    return {"which": which, "split": split, "accuracy": evaluate(qnet, ds),
            "params": qnet.param_count(), "reported_params": row["params"]}


def run_end_to_end(config_path, run_dir=None, workers: int = 1, seed: int | None = None) -> dict:
    pipe = Pipeline(load_config(config_path, seed), run_dir, workers)
    pipe.run("final")
    return load_report(pipe.run_dir)
