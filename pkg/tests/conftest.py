"""Shared fixtures. Full-size trained models are expensive (minutes each), so
they are trained once per session and also cached on disk through pytest's
cache directory (``pytest --cache-clear`` forces retraining)."""

import hashlib
import json
import time

import numpy as np
import pytest

from mmgibbs.datasets import DatasetSpec, generate
from mmgibbs.models import MlpEnergy, PosteriorNet, load_checkpoint, save_checkpoint
from mmgibbs.posterior import iso_variance
from mmgibbs.training import TrainConfig, init_params, train

SIGMA = 0.2
MULTILEVEL_LEVELS = list(np.geomspace(1.0, 0.05, 10))


class ModelStore:
    def __init__(self, root):
        self.root = root
        self.memo = {}

    def get(self, kind, cfg: TrainConfig):
        spec = DatasetSpec(kind=kind, n=10_000, seed=0)
        key_src = json.dumps({"data": spec.to_dict(), "train": cfg.to_dict(), "v": 1}, sort_keys=True)
        key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
        if key in self.memo:
            return self.memo[key]
        path = self.root / f"{kind}-{cfg.objective}-{key}.ckpt"
        data = generate(spec).points
        if path.exists():
            ck = load_checkpoint(path)
            entry = (ck.model, ck.meta)
        else:
            start = time.perf_counter()
            params, trace = train(init_params(cfg, 2), data, cfg)
            meta = {"epoch_means": trace.epoch_means().tolist(), "train_seconds": time.perf_counter() - start}
            if cfg.objective == "kl":
                model = PosteriorNet(params)
            else:
                model = MlpEnergy(params, cfg.sigma_conditioned)
                if not cfg.sigma_conditioned:
                    noisy = data + cfg.sigma * np.random.default_rng([cfg.seed, 2]).standard_normal(data.shape)
                    meta["iso_variance"] = iso_variance(model, noisy, cfg.sigma)
            save_checkpoint(path, model, meta)
            entry = (model, meta)
        self.memo[key] = entry
        return entry

    def data(self, kind):
        return generate(DatasetSpec(kind=kind, n=10_000, seed=0)).points


@pytest.fixture(scope="session")
def model_store(request):
    return ModelStore(request.config.cache.mkdir("mmgibbs-models"))


@pytest.fixture(scope="session")
def mog_energy(model_store):
    """2-400-400-400-1 Swish energy trained by DSM on 10^4 MoG points (lr 1e-4, batch 100, 100 epochs)."""
    return model_store.get("mog4", TrainConfig(sigma=SIGMA))


@pytest.fixture(scope="session")
def mog_posterior_net(model_store):
    return model_store.get("mog4", TrainConfig(sigma=SIGMA, objective="kl"))


@pytest.fixture(scope="session")
def mog_conditioned_energy(model_store):
    return model_store.get("mog4", TrainConfig(schedule=MULTILEVEL_LEVELS))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one status line per acceptance criterion; echoed in the terminal summary."""
    def record(number, passed, detail, seconds):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail} runtime={seconds:.1f}s"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
