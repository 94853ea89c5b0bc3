"""Shared dataset fixtures.

Datasets are generated once per session; every consumer treats them as
read-only. Specs are chosen so the suite stays in the seconds range.
"""

import pytest

from emtune.data import SynthSpec, load_manifest, synth_generate


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The default spec: 4 overlapping classes, 50 samples each, dim 16."""
    root = tmp_path_factory.mktemp("synth_default")
    manifest_path = synth_generate(SynthSpec(), root)
    return load_manifest(manifest_path)


@pytest.fixture(scope="session")
def separable_dataset(tmp_path_factory):
    """Three classes so far apart that any sane pipeline scores 100%."""
    root = tmp_path_factory.mktemp("synth_separable")
    spec = SynthSpec(
        num_classes=3,
        samples_per_class=80,
        dim=32,
        frames_range=(5, 15),
        separation=50.0,
        noise=0.1,
        seed=11,
    )
    return load_manifest(synth_generate(spec, root))


@pytest.fixture(scope="session")
def directional_dataset(tmp_path_factory):
    """Moderately separated clusters for the directional geometry runs."""
    root = tmp_path_factory.mktemp("synth_directional")
    spec = SynthSpec(
        num_classes=4,
        samples_per_class=200,
        dim=64,
        frames_range=(5, 15),
        separation=8.0,
        noise=2.0,
        seed=7,
    )
    return load_manifest(synth_generate(spec, root))


@pytest.fixture(scope="session")
def cli_dataset_dir(tmp_path_factory):
    """A small dataset tree for exercising the command line end to end."""
    root = tmp_path_factory.mktemp("synth_cli")
    spec = SynthSpec(
        num_classes=3,
        samples_per_class=12,
        dim=8,
        frames_range=(3, 6),
        separation=6.0,
        noise=1.0,
        seed=5,
    )
    synth_generate(spec, root)
    return root
