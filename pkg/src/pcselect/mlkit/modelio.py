"""Model persistence: a self-describing .npz container.

The container holds a JSON metadata entry (version, kind, label names,
seed, preprocessing/geometry description) plus the numeric arrays. Trees
are small and serialize into the metadata; network weights and pipeline
statistics go in as arrays.
"""

import json

import numpy as np

from . import neural
from .classifiers import (
    MODEL_FILE_VERSION,
    BenchmarkModel,
    CnnModel,
    KnnModel,
    LogRegModel,
    MlpModel,
    RandomForestModel,
    TrainedModel,
    _TreeNode,
)
from .preprocess import FeaturePipeline, PcaBasis, StandardizeStats


def _tree_to_obj(node):
    if node.value is not None:
        return {"v": node.value}
    return {
        "f": node.feature,
        "t": node.threshold,
        "l": _tree_to_obj(node.left),
        "r": _tree_to_obj(node.right),
    }


def _tree_from_obj(obj):
    if "v" in obj:
        return _TreeNode(value=obj["v"])
    return _TreeNode(
        feature=obj["f"],
        threshold=obj["t"],
        left=_tree_from_obj(obj["l"]),
        right=_tree_from_obj(obj["r"]),
    )


def save_model(tm: TrainedModel, path):
    meta = {
        "version": MODEL_FILE_VERSION,
        "kind": tm.kind,
        "n_labels": tm.n_labels,
        "fallback_index": tm.fallback_index,
        "threshold": tm.threshold,
        "label_names": list(tm.label_names),
        "seed": tm.seed,
        "image_resolution": tm.image_resolution,
    }
    arrays = {}
    if tm.pipeline is not None:
        meta["pipeline_space"] = tm.pipeline.space
        arrays["pipe_medians"] = tm.pipeline.medians
        arrays["pipe_mean"] = tm.pipeline.stats.mean
        arrays["pipe_std"] = tm.pipeline.stats.std
        if tm.pipeline.pca is not None:
            arrays["pca_mean"] = tm.pipeline.pca.mean
            arrays["pca_components"] = tm.pipeline.pca.components
            arrays["pca_ratios"] = tm.pipeline.pca.explained_variance_ratio

    model = tm.model
    if isinstance(model, BenchmarkModel):
        meta["benchmark_label"] = model.label_index
    elif isinstance(model, KnnModel):
        meta["knn_k"] = model.k
        arrays["knn_X"] = model.X
        arrays["knn_Y"] = model.Y
    elif isinstance(model, LogRegModel):
        arrays["logreg_w"] = model.w
        arrays["logreg_b"] = model.b
    elif isinstance(model, RandomForestModel):
        meta["n_trees"] = model.n_trees
        meta["forests"] = [[_tree_to_obj(t) for t in trees] for trees in model.forests]
    elif isinstance(model, (MlpModel, CnnModel)):
        net = model.net
        meta["net_shapes"] = [list(p.shape) for p, _ in net.params()]
        if isinstance(model, MlpModel):
            meta["mlp_dims"] = [
                net.layers[0].w.shape[0],
                net.layers[0].w.shape[1],
                net.layers[-1].w.shape[1],
            ]
        else:
            conv1 = net.layers[0].w.shape[3]
            conv2 = net.layers[3].w.shape[3]
            meta["cnn_arch"] = {
                "m": model.m,
                "c_in": net.layers[0].w.shape[2],
                "conv1": conv1,
                "conv2": conv2,
                "dense": net.layers[7].w.shape[1],
                "dropout": net.layers[9].rate,
                "k_out": net.layers[10].w.shape[1],
            }
        for i, (p, _) in enumerate(net.params()):
            arrays[f"net_param_{i}"] = p
    else:
        raise ValueError(f"cannot serialize model of type {type(model)!r}")

    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_model(path) -> TrainedModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"].tobytes()).decode())
        if meta.get("version") != MODEL_FILE_VERSION:
            raise ValueError(
                f"unsupported model file version {meta.get('version')!r}"
            )
        kind = meta["kind"]
        pipeline = None
        if "pipeline_space" in meta:
            pca = None
            if "pca_components" in data:
                pca = PcaBasis(
                    mean=data["pca_mean"],
                    components=data["pca_components"],
                    explained_variance_ratio=data["pca_ratios"],
                    n_components=data["pca_components"].shape[0],
                )
            pipeline = FeaturePipeline(
                space=meta["pipeline_space"],
                medians=data["pipe_medians"],
                stats=StandardizeStats(mean=data["pipe_mean"], std=data["pipe_std"]),
                pca=pca,
            )

        if kind == "benchmark":
            model = BenchmarkModel(
                label_index=meta["benchmark_label"], n_labels=meta["n_labels"]
            )
        elif kind == "knn":
            model = KnnModel(X=data["knn_X"], Y=data["knn_Y"], k=meta["knn_k"])
        elif kind == "logreg":
            model = LogRegModel(w=data["logreg_w"], b=data["logreg_b"])
        elif kind == "rforest":
            forests = [
                [_tree_from_obj(t) for t in trees] for trees in meta["forests"]
            ]
            model = RandomForestModel(forests=forests, n_trees=meta["n_trees"])
        elif kind == "mlp":
            d_in, hidden, k_out = meta["mlp_dims"]
            net = neural.build_mlp(d_in, k_out, hidden=hidden, seed=0)
            _restore_net(net, data)
            model = MlpModel(net=net)
        elif kind == "cnn":
            arch = meta["cnn_arch"]
            net = neural.build_cnn(
                arch["m"],
                arch["k_out"],
                c_in=arch["c_in"],
                conv1=arch["conv1"],
                conv2=arch["conv2"],
                dense=arch["dense"],
                dropout=arch["dropout"],
                seed=0,
            )
            _restore_net(net, data)
            model = CnnModel(net=net, m=arch["m"])
        else:
            raise ValueError(f"unknown model kind {kind!r} in {path}")

        return TrainedModel(
            kind=kind,
            model=model,
            n_labels=meta["n_labels"],
            fallback_index=meta["fallback_index"],
            threshold=meta["threshold"],
            pipeline=pipeline,
            label_names=meta["label_names"],
            seed=meta["seed"],
            image_resolution=meta["image_resolution"],
            version=meta["version"],
        )


def _restore_net(net, data):
    for i, (p, _) in enumerate(net.params()):
        p[...] = data[f"net_param_{i}"]
