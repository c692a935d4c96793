import numpy as np

from reverb_versa.core.dataset import Dataset
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.models import Pose, PreconditionError

BASELINES = ("nearest", "linear")


def _joint_distances(dataset: Dataset, emitter: Pose, listener: Pose):
    train = dataset.train
    if not train:
        raise PreconditionError("baselines need a non-empty train split")
    joint = np.array([np.concatenate([s.emitter.pos, s.listener.pos]) for s in train])
    query = np.concatenate([emitter.pos, listener.pos])
    return train, np.linalg.norm(joint - query, axis=1)


def baseline_predict(kind: str, dataset: Dataset, emitter: Pose, listener: Pose, k: int = 4) -> ImpulseResponse:
    """
    nearest: the training IR closest in joint (emitter, listener) position,
    lowest sample id on ties. linear: inverse-distance blend of the k
    nearest training IRs; an exact match returns that IR unchanged.
    """
    if kind not in BASELINES:
        raise PreconditionError(f"unknown baseline '{kind}' (expected one of {BASELINES})")
    train, d = _joint_distances(dataset, emitter, listener)
    order = np.lexsort((np.arange(len(d)), d))
    if kind == "nearest" or d[order[0]] == 0.0:
        return train[int(order[0])].ir
    nearest = order[:k]
    w = 1.0 / d[nearest]
    w = w / w.sum()
    blend = np.zeros(len(train[int(nearest[0])].ir))
    for weight, i in zip(w, nearest):
        blend += weight * np.asarray(train[int(i)].ir.samples, dtype=float)
    return ImpulseResponse(blend, dataset.sample_rate)
