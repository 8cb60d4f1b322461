"""Pipeline stages with explicit file handoff, plus the ablation and sweep harnesses.

Each stage reads its inputs from the config paths and from the output
directory of earlier stages, writes its artifacts into its own
subdirectory, and records a manifest there::

    <out>/build-graphs/   split.json, dx_ontology.tsv, rx_ontology.tsv,
                          relation_nodes.tsv, relation_edges.tsv
    <out>/pretrain-onto/  ontology.emb (+ .codes), dx_loss.tsv, rx_loss.tsv
    <out>/pretrain-rel/   relation.emb (+ .codes), loss.tsv
    <out>/train/          checkpoint.bin, loss.tsv, metrics.tsv
    <out>/evaluate/       metrics.txt, metrics.csv
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import persistence as io
from .config import ENCODER_STUDY, VARIANTS, stage_seed
from .contrastive import OntologyEmbedder, RelationEmbedder
from .emr import Split, load_records, split_dataset
from .encoders import EmbeddingSource, NodeEmbeddings, uniform_table
from .exceptions import ConfigError, ParseError
from .metrics import evaluate as evaluate_records
from .metrics import format_csv, format_table
from .ontology import build_ontology_graph, format_ontology, load_hierarchy
from .predictor import FusionTables, MedicationPredictor
from .relation_graph import ZETA_GRID, RelationGraph, build_adjacency, count_visits, format_edges, parse_edges

logger = logging.getLogger(__name__)

STAGES = ("build-graphs", "pretrain-onto", "pretrain-rel", "train", "evaluate")


@dataclass(frozen=True)
class VariantFlags:
    use_ontology: bool
    use_relation: bool
    random_relation_init: bool
    binarize: bool


def variant_flags(variant):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return VariantFlags(
        use_ontology=variant not in ("hg-", "hgrg-"),
        use_relation=variant not in ("rg-", "hgrg-"),
        random_relation_init=variant in ("r-", "hg-"),
        binarize=variant == "rgw-",
    )


def stage_dir(out, stage):
    path = Path(out) / stage
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_inputs(cfg):
    cfg.require_paths("records", "dx_hierarchy", "rx_hierarchy")
    cohort = load_records(cfg.paths.records)
    dx = build_ontology_graph(cohort.diagnosis_vocab.codes, load_hierarchy(cfg.paths.dx_hierarchy), "dx")
    rx = build_ontology_graph(cohort.medication_vocab.codes, load_hierarchy(cfg.paths.rx_hierarchy), "rx")
    return cohort, dx, rx


def _load_split(out):
    path = io.require(Path(out) / "build-graphs" / "split.json", "build-graphs")
    try:
        return Split.from_json(path.read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise ParseError(f"bad split file: {exc}", path=path) from None


def _joint_codes(cohort):
    return tuple(cohort.diagnosis_vocab.codes) + tuple(cohort.medication_vocab.codes)


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")
    return Path(path)


# -- stages ------------------------------------------------------------------------


def build_graphs(cfg, out):
    """Split the cohort, export both ontologies and the co-occurrence graph."""
    cohort, dx, rx = _load_inputs(cfg)
    d = stage_dir(out, "build-graphs")
    split = split_dataset(cohort.multi_visit, cfg.experiment.seed)
    # graph counts use single-visit patients and the training split only
    visits = [v for p in cohort.single_visit for v in p.visits]
    visits += [v for pid in split.train for v in cohort.patient(pid).visits]
    stats = count_visits(visits, len(cohort.diagnosis_vocab), len(cohort.medication_vocab))
    graph = build_adjacency(stats, cfg.relation.zeta, len(cohort.diagnosis_vocab))
    codes = _joint_codes(cohort)
    kinds = ["dx"] * len(cohort.diagnosis_vocab) + ["rx"] * len(cohort.medication_vocab)
    artifacts = [
        _write(d / "split.json", split.to_json()),
        _write(d / "dx_ontology.tsv", format_ontology(dx)),
        _write(d / "rx_ontology.tsv", format_ontology(rx)),
        _write(d / "relation_nodes.tsv", "".join(f"{i}\t{k}\t{c}\n" for i, (k, c) in enumerate(zip(kinds, codes)))),
        _write(d / "relation_edges.tsv", format_edges(graph)),
    ]
    io.write_manifest(d, "build-graphs", cfg.config_hash(), cfg.experiment.seed, artifacts)
    logger.info("build-graphs: %d codes, %d relation edges", len(codes), graph.n_edges)
    return graph


def _ontology_embedder(cfg, seed):
    o = cfg.ontology
    return OntologyEmbedder(
        embedding_dim=o.embedding_dim,
        n_heads=o.n_heads,
        encoder=o.encoder,
        activation=o.activation,
        leaky_slope=cfg.experiment.leaky_slope,
        include_self=o.include_self,
        ancestors=o.ancestors,
        train_table=o.train_table,
        epochs=o.epochs,
        learning_rate=o.learning_rate,
        random_state=seed,
    )


def pretrain_onto(cfg, out):
    """Contrastive pretraining of both ontology encoders; leaf rows go to one joint table."""
    io.require(Path(out) / "build-graphs" / "manifest.build-graphs.json", "build-graphs")
    cohort, dx, rx = _load_inputs(cfg)
    d = stage_dir(out, "pretrain-onto")
    seed = cfg.experiment.seed
    fitted = {}
    for kind, graph in (("dx", dx), ("rx", rx)):
        fitted[kind] = _ontology_embedder(cfg, stage_seed(seed, f"pretrain-onto:{kind}")).fit(graph)
    table = np.vstack([fitted["dx"].embeddings_, fitted["rx"].embeddings_])
    emb = NodeEmbeddings(table, EmbeddingSource.ONTOLOGY_AUGMENTED, _joint_codes(cohort))
    io.save_embeddings(d / "ontology.emb", emb)
    artifacts = [d / "ontology.emb", io.codes_path(d / "ontology.emb")]
    for kind in ("dx", "rx"):
        artifacts.append(_write(d / f"{kind}_loss.tsv", io.format_loss_log(fitted[kind].loss_curve_)))
    io.write_manifest(d, "pretrain-onto", cfg.config_hash(), seed, artifacts)
    return emb


def _load_relation_graph(out, n_codes, n_diagnoses, zeta):
    path = io.require(Path(out) / "build-graphs" / "relation_edges.tsv", "build-graphs")
    adjacency = parse_edges(path.read_text(encoding="utf-8").splitlines(), n_codes, path)
    return RelationGraph(adjacency, zeta, n_diagnoses)


def pretrain_rel(cfg, out):
    """Contrastive pretraining on the co-occurrence graph, initialised from the ontology table."""
    cohort, _, _ = _load_inputs(cfg)
    flags = variant_flags(cfg.experiment.variant)
    n_codes, n_dx = cohort.n_codes, len(cohort.diagnosis_vocab)
    graph = _load_relation_graph(out, n_codes, n_dx, cfg.relation.zeta)
    adjacency = (graph.binarized() if flags.binarize else graph).adjacency
    seed = cfg.experiment.seed
    if flags.random_relation_init:
        rng = np.random.default_rng(stage_seed(seed, "pretrain-rel:init"))
        features = uniform_table(rng, n_codes, cfg.ontology.embedding_dim)
    else:
        features = io.load_embeddings(Path(out) / "pretrain-onto" / "ontology.emb", "pretrain-onto").matrix
    r = cfg.relation
    model = RelationEmbedder(
        embedding_dim=r.embedding_dim,
        encoder=r.encoder,
        n_heads=r.n_heads,
        activation=cfg.ontology.activation,
        leaky_slope=cfg.experiment.leaky_slope,
        epochs=r.epochs,
        learning_rate=r.learning_rate,
        random_state=stage_seed(seed, "pretrain-rel"),
    ).fit(features, adjacency=adjacency)
    d = stage_dir(out, "pretrain-rel")
    emb = NodeEmbeddings(model.embeddings_, EmbeddingSource.RELATION_AUGMENTED, _joint_codes(cohort))
    io.save_embeddings(d / "relation.emb", emb)
    artifacts = [d / "relation.emb", io.codes_path(d / "relation.emb"), _write(d / "loss.tsv", io.format_loss_log(model.loss_curve_))]
    io.write_manifest(d, "pretrain-rel", cfg.config_hash(), seed, artifacts)
    return emb


def _predictor(cfg):
    p = cfg.predictor
    flags = variant_flags(cfg.experiment.variant)
    return MedicationPredictor(
        embedding_dim=p.embedding_dim,
        hidden_dim=p.hidden_dim,
        patient_dim=p.patient_dim,
        use_ontology=flags.use_ontology,
        use_relation=flags.use_relation,
        epochs=p.epochs,
        learning_rate=p.learning_rate,
        threshold=p.threshold,
        pooled_prauc=p.pooled_prauc,
        random_state=stage_seed(cfg.experiment.seed, "train"),
    )


def _tables(cfg, out, cohort):
    flags = variant_flags(cfg.experiment.variant)
    onto = rel = None
    if flags.use_ontology:
        onto = io.load_embeddings(Path(out) / "pretrain-onto" / "ontology.emb", "pretrain-onto").matrix
    if flags.use_relation:
        rel = io.load_embeddings(Path(out) / "pretrain-rel" / "relation.emb", "pretrain-rel").matrix
    return FusionTables(len(cohort.diagnosis_vocab), len(cohort.medication_vocab), onto, rel)


def train(cfg, out):
    cohort, _, _ = _load_inputs(cfg)
    split = _load_split(out)
    tables = _tables(cfg, out, cohort)
    model = _predictor(cfg)
    if not split.train:
        raise ConfigError("empty training split")
    model.fit(
        [cohort.patient(p) for p in split.train],
        tables=tables,
        validation=[cohort.patient(p) for p in split.validation] or None,
    )
    d = stage_dir(out, "train")
    io.save_checkpoint(d / "checkpoint.bin", model.state_dict(), cfg.config_hash())
    artifacts = [
        d / "checkpoint.bin",
        _write(d / "loss.tsv", io.format_loss_log(model.loss_curve_)),
        _write(d / "metrics.tsv", io.format_metrics_log(model.metrics_log_)),
    ]
    io.write_manifest(d, "train", cfg.config_hash(), cfg.experiment.seed, artifacts)
    return model


def evaluate(cfg, out, split_name="test"):
    """Score the trained checkpoint on a split; returns the metric dict."""
    cohort, _, _ = _load_inputs(cfg)
    split = _load_split(out)
    state, digest = io.load_checkpoint(Path(out) / "train" / "checkpoint.bin", "train")
    if digest and digest != cfg.config_hash():
        warnings.warn("checkpoint was trained under a different config", RuntimeWarning, stacklevel=2)
    model = _predictor(cfg).initialize(_tables(cfg, out, cohort))
    model.load_state_dict(state)
    patients = [cohort.patient(p) for p in getattr(split, split_name)]
    metrics = evaluate_records(model.evaluation_records(patients), cfg.predictor.pooled_prauc)
    d = stage_dir(out, "evaluate")
    rows = [(cfg.experiment.variant, metrics)]
    artifacts = [
        _write(d / "metrics.txt", format_table(rows, label="variant")),
        _write(d / "metrics.csv", format_csv(rows, label="variant")),
    ]
    io.write_manifest(d, "evaluate", cfg.config_hash(), cfg.experiment.seed, artifacts)
    return metrics


def run_pipeline(cfg, out):
    """All stages in order, skipping pretraining the variant does not use."""
    flags = variant_flags(cfg.experiment.variant)
    build_graphs(cfg, out)
    if flags.use_ontology or (flags.use_relation and not flags.random_relation_init):
        pretrain_onto(cfg, out)
    if flags.use_relation:
        pretrain_rel(cfg, out)
    train(cfg, out)
    return evaluate(cfg, out)


# -- harnesses -----------------------------------------------------------------------


def _harness_output(out, name, rows, label):
    d = stage_dir(out, name)
    artifacts = [
        _write(d / "results.txt", format_table(rows, label=label)),
        _write(d / "results.csv", format_csv(rows, label=label)),
    ]
    return d, artifacts


def ablate(cfg, out, variants=VARIANTS):
    rows = []
    for v in variants:
        variant_flags(v)
        sub = cfg.with_overrides({"experiment.variant": v})
        rows.append((v, run_pipeline(sub, Path(out) / "ablate" / v)))
    d, artifacts = _harness_output(out, "ablate", rows, "variant")
    io.write_manifest(d, "ablate", cfg.config_hash(), cfg.experiment.seed, artifacts)
    return rows


def sweep_zeta(cfg, out, grid=ZETA_GRID):
    rows = []
    for zeta in grid:
        sub = cfg.with_overrides({"relation.zeta": repr(float(zeta))})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rows.append((f"{zeta:.2f}", run_pipeline(sub, Path(out) / "sweep-zeta" / f"zeta-{zeta:.2f}")))
    d, artifacts = _harness_output(out, "sweep-zeta", rows, "zeta")
    io.write_manifest(d, "sweep-zeta", cfg.config_hash(), cfg.experiment.seed, artifacts)
    return rows


def encoder_study(cfg, out, pairs=tuple(ENCODER_STUDY)):
    rows = []
    for name in pairs:
        onto_enc, rel_enc = ENCODER_STUDY[name]
        sub = cfg.with_overrides({"ontology.encoder": onto_enc, "relation.encoder": rel_enc})
        rows.append((name, run_pipeline(sub, Path(out) / "encoder-study" / name)))
    d, artifacts = _harness_output(out, "encoder-study", rows, "encoders")
    io.write_manifest(d, "encoder-study", cfg.config_hash(), cfg.experiment.seed, artifacts)
    return rows
