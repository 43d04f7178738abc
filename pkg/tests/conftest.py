import pytest
import torch

from reactgen.config import RunConfig
from reactgen.dataset import synth_corpus, load_pair

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_config() -> RunConfig:
    return RunConfig.toy_profile()


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory, toy_config):
    """The shipped 96-pair laptop corpus, built once per session."""
    root = tmp_path_factory.mktemp("toy_corpus")
    entries = synth_corpus(
        toy_config.data.n_pairs, toy_config.data.n_categories, seed=0,
        out_dir=root, video_frames=toy_config.data.video_frames,
        video_dim=toy_config.data.video_dim)
    return root, entries


@pytest.fixture(scope="session")
def toy_train_motions(toy_corpus):
    root, entries = toy_corpus
    return [load_pair(root, e)[1] for e in entries if e.split == "train"]
