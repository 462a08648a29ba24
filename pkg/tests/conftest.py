"""Shared fixtures: the synthetic corpus and one trained run, built once per session."""
import pytest
import torch

from ckglearn import synth
from ckglearn.encoders import load_checkpoint
from ckglearn.evaluation import EvalConfig
from ckglearn.training import TrainConfig, train
from ckglearn.triples import convert_graph, group_by_premise

torch.set_num_threads(1)  # keeps CPU runs bitwise reproducible


SYNTH_TRAIN_KWARGS = dict(
    k=2,
    batch_size=32,
    max_len=16,
    lr=0.01,
    tau=0.07,
    max_epochs=10,
    seed=7,
    backbone="tiny",
    vocab_size=256,
    hidden_dim=32,
)


@pytest.fixture(scope="session")
def synth_data():
    return synth.generate(synth.SynthSpec(seed=7))


@pytest.fixture(scope="session")
def synth_groups(synth_data):
    return (
        group_by_premise(convert_graph(synth_data.train)),
        group_by_premise(convert_graph(synth_data.valid)),
    )


@pytest.fixture(scope="session")
def synth_train_config():
    return TrainConfig(**SYNTH_TRAIN_KWARGS)


@pytest.fixture(scope="session")
def eval_config():
    return EvalConfig(max_len=16)


@pytest.fixture(scope="session")
def trained_run(synth_train_config, synth_groups, tmp_path_factory):
    train_groups, valid_groups = synth_groups
    run_dir = tmp_path_factory.mktemp("trained_run")
    return train(synth_train_config, train_groups, valid_groups, run_dir=run_dir)


@pytest.fixture(scope="session")
def trained_encoder(trained_run):
    encoder, _ = load_checkpoint(trained_run.best_checkpoint)
    return encoder


@pytest.fixture(scope="session")
def fresh_encoder(synth_train_config):
    encoder = synth_train_config.build_encoder()
    encoder.eval()
    return encoder


@pytest.fixture(scope="session")
def qa_items(synth_data):
    return synth.make_qa_items(synth_data, n_items=50, seed=13)
