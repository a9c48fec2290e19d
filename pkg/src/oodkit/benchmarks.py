"""End-to-end desk-scale benchmarks.

``run_fine_grained`` is a multi-class benchmark whose in-distribution data
contain near-duplicate class pairs; ``run_multilabel`` trains a sigmoid-head
model on multi-label data. Both score a held-out set of in-distribution test
points against anomalies drawn from means far from every training class.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import density, detectors, metrics, synthetic, toymodel
from .rng import derive_seed


@dataclass(frozen=True)
class BenchmarkConfig:
    class_count: int = 20
    feature_dim: int = 16
    fine_grained_pairs: int = 5
    delta: float = 1.0
    sigma: float = 1.0
    base_separation: float = 8.0
    per_class_train: int = 200
    per_class_val: int = 20
    per_class_test: int = 50
    ood_count: int = 1000
    hidden: tuple = (64, 64)
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 64
    weight_decay: float = 0.01
    lof_k: int = 20
    iforest_trees: int = 100
    iforest_subsample: int = 256
    recall_level: float = 0.95

    def mixture(self, seed):
        return synthetic.MixtureSpec(
            class_count=self.class_count,
            feature_dim=self.feature_dim,
            sigma=self.sigma,
            base_separation=self.base_separation,
            fine_grained_pairs=self.fine_grained_pairs,
            delta=self.delta,
            layout_seed=seed,
        )

    def train_config(self, seed):
        return toymodel.TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=seed,
            weight_decay=self.weight_decay,
        )


@dataclass(frozen=True)
class MultiLabelConfig:
    class_count: int = 12
    feature_dim: int = 16
    sigma: float = 1.0
    base_separation: float = 8.0
    max_labels: int = 3
    train_count: int = 4000
    test_count: int = 1000
    ood_count: int = 1000
    hidden: tuple = (64, 64)
    epochs: int = 30
    learning_rate: float = 0.5
    batch_size: int = 64
    weight_decay: float = 0.01
    lof_k: int = 20
    iforest_trees: int = 100
    iforest_subsample: int = 256
    recall_level: float = 0.95


FINE_GRAINED_DETECTORS = ("msp", "maxlogit", "klmatch", "lof", "iforest", "branch")
MULTILABEL_DETECTORS = ("maxlogit", "logitavg", "lof", "iforest")


def _labels(n_in, n_out):
    return np.r_[np.zeros(n_in, dtype=np.uint8), np.ones(n_out, dtype=np.uint8)]


def run_fine_grained(seed, cfg: BenchmarkConfig = BenchmarkConfig()):
    """Train a classifier and a confidence-branch model, then evaluate each detector."""
    spec = cfg.mixture(seed)
    x_train, y_train = synthetic.gen_mixture_dataset(spec, cfg.per_class_train, derive_seed(seed, "train"))
    x_val, _ = synthetic.gen_mixture_dataset(spec, cfg.per_class_val, derive_seed(seed, "val"))
    x_test, _ = synthetic.gen_mixture_dataset(spec, cfg.per_class_test, derive_seed(seed, "test"))
    x_ood = synthetic.gen_ood_mixture(spec, cfg.ood_count, derive_seed(seed, "ood"))
    x_eval = np.r_[x_test, x_ood]
    labels = _labels(len(x_test), len(x_ood))

    model = toymodel.init_classifier(cfg.feature_dim, cfg.hidden, cfg.class_count, seed=seed)
    model, _ = toymodel.train_classifier(model, x_train, y_train, cfg.train_config(seed))
    branch = toymodel.init_classifier(cfg.feature_dim, cfg.hidden, cfg.class_count, confidence=True, seed=seed)
    branch, _ = toymodel.train_confidence_branch(branch, x_train, y_train, cfg.train_config(seed))

    logits = toymodel.forward(model, x_eval)
    train_logits = toymodel.forward(model, x_train)
    templates = detectors.fit_kl_templates(toymodel.forward(model, x_val))
    scores = {
        "msp": detectors.msp_score(logits),
        "maxlogit": detectors.maxlogit_score(logits),
        "klmatch": detectors.kl_matching_score(logits, templates),
        "lof": density.lof_score(density.lof_fit(train_logits, cfg.lof_k), logits),
        "iforest": density.iforest_score(
            density.iforest_fit(train_logits, cfg.iforest_trees, cfg.iforest_subsample, seed), logits
        ),
        "branch": toymodel.confidence_score(branch, x_eval),
    }
    return {name: metrics.evaluate(s, labels, cfg.recall_level) for name, s in scores.items()}


def run_multilabel(seed, cfg: MultiLabelConfig = MultiLabelConfig()):
    spec = synthetic.MixtureSpec(
        class_count=cfg.class_count,
        feature_dim=cfg.feature_dim,
        sigma=cfg.sigma,
        base_separation=cfg.base_separation,
        layout_seed=seed,
    )
    x_train, y_train = synthetic.gen_multilabel_dataset(spec, cfg.train_count, derive_seed(seed, "train"), cfg.max_labels)
    x_test, _ = synthetic.gen_multilabel_dataset(spec, cfg.test_count, derive_seed(seed, "test"), cfg.max_labels)
    x_ood = synthetic.gen_ood_mixture(spec, cfg.ood_count, derive_seed(seed, "ood"))
    x_eval = np.r_[x_test, x_ood]
    labels = _labels(len(x_test), len(x_ood))

    model = toymodel.init_classifier(cfg.feature_dim, cfg.hidden, cfg.class_count, head="sigmoid", seed=seed)
    tc = toymodel.TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                              seed=seed, weight_decay=cfg.weight_decay)
    model, _ = toymodel.train_classifier(model, x_train, y_train, tc)
    logits = toymodel.forward(model, x_eval)
    train_logits = toymodel.forward(model, x_train)
    scores = {
        "maxlogit": detectors.maxlogit_score(logits),
        "logitavg": detectors.logit_avg_score(logits),
        "lof": density.lof_score(density.lof_fit(train_logits, cfg.lof_k), logits),
        "iforest": density.iforest_score(
            density.iforest_fit(train_logits, cfg.iforest_trees, cfg.iforest_subsample, seed), logits
        ),
    }
    return {name: metrics.evaluate(s, labels, cfg.recall_level) for name, s in scores.items()}


@dataclass
class SummaryTable:
    """Per-detector metrics (in percent) for each seed, with means."""

    seeds: list
    per_seed: dict = field(default_factory=dict)  # detector -> list of EvalReport

    def add(self, results):
        for name, report in results.items():
            self.per_seed.setdefault(name, []).append(report)

    def mean(self, detector, metric):
        return float(np.mean([getattr(r, metric) for r in self.per_seed[detector]]))

    def rows(self):
        return [
            {
                "detector": name,
                "auroc": 100 * self.mean(name, "auroc"),
                "aupr": 100 * self.mean(name, "aupr"),
                "fpr95": 100 * self.mean(name, "fpr_at_recall"),
            }
            for name in self.per_seed
        ]

    def to_markdown(self):
        lines = [f"Mean over seeds {self.seeds} (percent)", "",
                 "| detector | AUROC | AUPR | FPR95 |", "|---|---|---|---|"]
        for r in self.rows():
            lines.append(f"| {r['detector']} | {r['auroc']:.2f} | {r['aupr']:.2f} | {r['fpr95']:.2f} |")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detector", "seed", "auroc", "aupr", "fpr95"])
        for name, reports in self.per_seed.items():
            for seed, r in zip(self.seeds, reports):
                w.writerow([name, seed, repr(r.auroc), repr(r.aupr), repr(r.fpr_at_recall)])
        for r in self.rows():
            w.writerow([r["detector"], "mean", repr(r["auroc"] / 100), repr(r["aupr"] / 100), repr(r["fpr95"] / 100)])
        return buf.getvalue()


def run_seeds(runner, seeds, cfg=None):
    table = SummaryTable(list(seeds))
    for s in seeds:
        table.add(runner(s) if cfg is None else runner(s, cfg))
    return table
