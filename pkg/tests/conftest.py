import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `import oracles` work from any rootdir

from oodkit import synthetic, toymodel  # noqa: E402
from oodkit.benchmarks import BenchmarkConfig  # noqa: E402
from oodkit.rng import derive_seed  # noqa: E402


@pytest.fixture(scope="session")
def fine_grained_models():
    """Classifier + confidence-branch model per seed on the default fine-grained benchmark."""
    cfg = BenchmarkConfig()
    out = []
    for seed in range(5):
        spec = cfg.mixture(seed)
        x, y = synthetic.gen_mixture_dataset(spec, cfg.per_class_train, derive_seed(seed, "train"))
        x_test, _ = synthetic.gen_mixture_dataset(spec, cfg.per_class_test, derive_seed(seed, "test"))
        x_ood = synthetic.gen_ood_mixture(spec, cfg.ood_count, derive_seed(seed, "ood"))
        clf = toymodel.init_classifier(cfg.feature_dim, cfg.hidden, cfg.class_count, seed=seed)
        clf, _ = toymodel.train_classifier(clf, x, y, cfg.train_config(seed))
        branch = toymodel.init_classifier(cfg.feature_dim, cfg.hidden, cfg.class_count, confidence=True, seed=seed)
        branch, _ = toymodel.train_confidence_branch(branch, x, y, cfg.train_config(seed))
        labels = np.r_[np.zeros(len(x_test)), np.ones(len(x_ood))].astype(np.uint8)
        out.append({"seed": seed, "clf": clf, "branch": branch, "x_test": x_test, "x_ood": x_ood,
                    "x_eval": np.r_[x_test, x_ood], "labels": labels})
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
