import pytest
from hypothesis import settings

from fabmatch import assocnet
from fabmatch.dataplane import (
    Modality,
    SynthWorld,
    build_dataset,
    generate_fabrics,
    kmeans_cluster,
    normalize_attributes,
    split_dataset,
)

settings.register_profile("suite", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("suite")


def make_world_dataset(n_fabrics=50, seed=0, noise_std=0.05, n_test=10, k=8):
    """Clustered, split synthetic dataset; the standard evaluation harness."""
    fabrics = generate_fabrics(n_fabrics, seed)
    attrs = normalize_attributes(fabrics)
    assignments, _ = kmeans_cluster(attrs, k, seed)
    for fabric, cid in zip(fabrics, assignments):
        fabric.cluster_id = int(cid)
    train_ids, test_ids = split_dataset(fabrics, n_test, seed)
    world = SynthWorld(seed, noise_std=noise_std)
    dataset = build_dataset(world, fabrics)
    dataset.train_ids = train_ids
    dataset.test_ids = test_ids
    return world, dataset


def toy_observation(rng, dim=8, fabric_id=0, modality=Modality.DEPTH, instance=0):
    from fabmatch.dataplane import Observation

    return Observation(fabric_id, modality, instance, rng.normal(size=dim))


def toy_group(model, rng, label, dim=8, n_clusters=8):
    """Random group matching the model's architecture, for gradient checks."""
    payloads = []
    for b, mod in enumerate(model.branch_modalities):
        if model.architecture == assocnet.MULTI_INPUT and b == 2:
            payloads.append(tuple(toy_observation(rng, dim, modality=mod, instance=p)
                                  for p in range(assocnet.MULTI_PRESS_COUNT)))
        else:
            payloads.append(toy_observation(rng, dim, modality=mod))
    clusters = ()
    if model.uses_heads:
        clusters = tuple(int(rng.integers(n_clusters)) for _ in range(model.n_branches))
    if model.n_branches == 2:
        return assocnet.TripletGroup(payloads[0], payloads[1], None, label, clusters)
    return assocnet.TripletGroup(payloads[0], payloads[1], payloads[2], label, clusters)


@pytest.fixture(scope="session")
def small_dataset():
    """20 fabrics, light noise; enough for trainer/eval unit tests."""
    _, dataset = make_world_dataset(n_fabrics=20, seed=11, noise_std=0.05, n_test=5, k=4)
    return dataset
