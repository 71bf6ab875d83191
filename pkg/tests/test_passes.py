import numpy as np
import pytest

from conftest import TINY
from diopt import (Tensor, build_embedding_model, forward, model_size_bytes,
                   param_count)
from diopt.models import LayerNode, ModelGraph, ModelMeta
from diopt.passes import (PruneMask, coo_break_even_amount, coo_memory_bytes,
                          count_conv_relu_pairs, dense_export_size,
                          dense_memory_bytes, fuse_conv_relu, memory_estimate,
                          prune_structured, prune_unstructured_global,
                          quantize_tensor_int8, quantize_weights_int8,
                          sparse_export_size, sparsity_report)
from diopt.tensor import ELEMENT_SIZES, f32


def _conv_model(weights: dict[str, np.ndarray]):
    """Model of bare conv nodes, one per given weight tensor."""
    nodes, params = [], {}
    for name, w in weights.items():
        c_out, c_in, k = w.shape
        nodes.append(LayerNode(kind="conv1d", name=name,
                               hyper={"in_channels": c_in, "out_channels": c_out,
                                      "kernel": k, "stride": 1, "padding": 0},
                               params=(f"{name}.weight", f"{name}.bias")))
        params[f"{name}.weight"] = f32(w)
        params[f"{name}.bias"] = f32(np.zeros(c_out))
    return ModelGraph(nodes, params, ModelMeta("test", 0, 0))


class TestFusion:
    def test_reduced_drops_four_nodes(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        fused = fuse_conv_relu(model)
        assert count_conv_relu_pairs(model) == 4
        assert len(fused.nodes) == len(model.nodes) - 4
        assert sum(1 for n in fused.nodes if n.kind == "fused_conv_relu") == 4
        assert sum(1 for n in fused.nodes if n.kind == "relu") == 0

    def test_baseline_with_leaky_relu_unchanged(self):
        model = build_embedding_model(TINY, "baseline", seed=0)
        fused = fuse_conv_relu(model)
        assert fused.nodes == model.nodes

    def test_exactness_on_random_inputs(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        fused = fuse_conv_relu(model)
        rng = np.random.default_rng(1)
        for _ in range(100):
            x = Tensor(rng.standard_normal((1, 4000)).astype(np.float32))
            a = forward(model, x).data
            b = forward(fused, x).data
            assert np.array_equal(a, b)

    def test_counts_invariant(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        fused = fuse_conv_relu(model)
        assert param_count(fused) == param_count(model)
        assert model_size_bytes(fused) == model_size_bytes(model)

    def test_fusion_keeps_parameter_names(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        fused = fuse_conv_relu(model)
        assert set(fused.params) == set(model.params)


class TestQuantizeTensor:
    def test_hand_case(self):
        q = quantize_tensor_int8(f32([-2.0, 1.0, 0.5]))
        assert q.data.tolist() == [-127, 64, 32]
        assert q.quant_scale == pytest.approx(2 / 127, rel=1e-6)

    def test_all_zero(self):
        q = quantize_tensor_int8(f32([0.0, 0.0, 0.0]))
        assert q.quant_scale == 1.0
        assert np.all(q.data == 0)

    def test_round_trip_bound_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            x = (rng.standard_normal(int(rng.integers(1, 64)))
                 * rng.uniform(1e-3, 100)).astype(np.float32)
            q = quantize_tensor_int8(f32(x))
            err = np.abs(x.astype(np.float64)
                         - q.data.astype(np.float64) * q.quant_scale)
            assert err.max() <= q.quant_scale / 2 + 1e-12

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="NaN|infinite"):
            quantize_tensor_int8(f32([1.0, np.nan]))
        with pytest.raises(ValueError, match="NaN|infinite"):
            quantize_tensor_int8(f32([np.inf]))

    def test_shape_preserved(self):
        q = quantize_tensor_int8(f32(np.ones((3, 4, 5))))
        assert q.shape == (3, 4, 5)


class TestQuantizeModel:
    def test_weight_bytes_ratio(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        quant = quantize_weights_int8(model)
        for name, t in quant.params.items():
            if t.elem_kind == "i8":
                f32_bytes = t.size * 4
                assert t.byte_size() / f32_bytes <= 0.35

    def test_size_strictly_decreases(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        assert model_size_bytes(quantize_weights_int8(model)) < model_size_bytes(model)

    def test_only_target_weights_quantized(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        quant = quantize_weights_int8(model)
        assert quant.params["sinc.weight"].elem_kind == "f32"
        assert quant.params["block0.bn.gamma"].elem_kind == "f32"
        assert quant.params["block0.conv.bias"].elem_kind == "f32"
        assert quant.params["block0.conv.weight"].elem_kind == "i8"
        assert quant.params["embed.weight"].elem_kind == "i8"

    def test_embedding_cosine_similarity(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        quant = quantize_weights_int8(model)
        rng = np.random.default_rng(3)
        for _ in range(30):
            x = Tensor(rng.standard_normal((1, 4000)).astype(np.float32))
            a = forward(model, x).data.astype(np.float64)
            b = forward(quant, x).data.astype(np.float64)
            cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
            assert cos >= 0.98


class TestStructuredPruning:
    def test_argmin_norm_slice_zeroed(self):
        w = np.zeros((3, 2, 2))
        w[0] = 1.5  # L2 norm 3.0
        w[1] = 0.05  # L2 norm 0.1
        w[2] = 1.0  # L2 norm 2.0
        model = _conv_model({"c": w})
        pruned, mask = prune_structured(model, amount=1, n=2, dim=0)
        out = pruned.params["c.weight"].data
        assert np.all(out[1] == 0)
        assert np.all(out[0] != 0) and np.all(out[2] != 0)
        assert np.all(mask.masks["c.weight"][1] == 0)

    def test_param_count_and_size_unchanged(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        pruned, _ = prune_structured(model)
        assert param_count(pruned) == param_count(model)
        assert model_size_bytes(pruned) == model_size_bytes(model)

    def test_all_targeted_modules_flagged(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        pruned, mask = prune_structured(model)
        report = sparsity_report(pruned, mask)
        assert report.is_pruned and all(report.is_pruned.values())

    def test_amount_exceeding_channels_rejected(self):
        model = _conv_model({"c": np.ones((3, 2, 2))})
        with pytest.raises(ValueError, match="amount"):
            prune_structured(model, amount=3)

    def test_whole_slices_only(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        _, mask = prune_structured(model, amount=2)
        for m in mask.masks.values():
            per_slice = m.reshape(m.shape[0], -1)
            assert np.all((per_slice.min(axis=1) == per_slice.max(axis=1)))
            assert (per_slice[:, 0] == 0).sum() == 2

    def test_tie_breaks_to_lowest_index(self):
        w = np.ones((3, 1, 2))  # all slices tie
        _, mask = prune_structured(_conv_model({"c": w}), amount=1)
        assert np.all(mask.masks["c.weight"][0] == 0)
        assert np.all(mask.masks["c.weight"][1:] == 1)


class TestUnstructuredPruning:
    def test_exact_zero_count(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((10, 5, 2))  # 100 weights
        pruned, _ = prune_unstructured_global(_conv_model({"c": w}), amount=0.3)
        assert np.count_nonzero(pruned.params["c.weight"].data == 0) == 30

    def test_amount_zero_is_identity(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        pruned, mask = prune_unstructured_global(model, amount=0.0)
        for k in model.params:
            assert np.array_equal(pruned.params[k].data, model.params[k].data)
        assert sparsity_report(pruned, mask).average == 0.0

    def test_global_sparsity_near_amount(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        for amount in (0.1, 0.3, 0.6):
            pruned, mask = prune_unstructured_global(model, amount=amount)
            total = sum(pruned.params[w].size for w in mask.masks)
            zeros = sum(int(np.count_nonzero(pruned.params[w].data == 0))
                        for w in mask.masks)
            assert amount - 1 / total <= zeros / total <= amount

    def test_smallest_magnitudes_go_first(self):
        w = np.arange(1, 25, dtype=np.float64).reshape(2, 3, 4)
        pruned, _ = prune_unstructured_global(_conv_model({"c": w}), amount=0.25)
        out = pruned.params["c.weight"].data.reshape(-1)
        assert np.all(out[:6] == 0) and np.all(out[6:] != 0)

    def test_invalid_amount(self):
        model = _conv_model({"c": np.ones((2, 2, 2))})
        with pytest.raises(ValueError):
            prune_unstructured_global(model, amount=1.0)
        with pytest.raises(ValueError):
            prune_unstructured_global(model, amount=-0.1)


class TestMaskSemantics:
    def test_apply_idempotent(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        pruned, mask = prune_unstructured_global(model, amount=0.3)
        twice = mask.apply(pruned)
        for k in pruned.params:
            assert np.array_equal(twice.params[k].data, pruned.params[k].data)

    def test_mask_shapes_match(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        _, mask = prune_structured(model)
        for name, m in mask.masks.items():
            assert m.shape == model.params[name].shape

    def test_mismatched_mask_rejected(self):
        model = _conv_model({"c": np.ones((2, 2, 2))})
        bad = PruneMask({"c.weight": np.ones((3, 2, 2), dtype=np.float32)},
                        "unstructured")
        with pytest.raises(ValueError, match="shape"):
            bad.apply(model)


class TestSparsityReport:
    def test_unpruned_all_zero(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        _, mask = prune_unstructured_global(model, amount=0.0)
        report = sparsity_report(model, mask)
        assert report.average == 0.0
        assert all(v == 0.0 for v in report.per_module.values())

    def test_one_of_two_fully_zeroed(self):
        weights = {"a": np.ones((2, 2, 2)), "b": np.ones((2, 2, 2))}
        model = _conv_model(weights)
        mask = PruneMask({"a.weight": np.zeros((2, 2, 2), dtype=np.float32),
                          "b.weight": np.ones((2, 2, 2), dtype=np.float32)},
                         "unstructured")
        report = sparsity_report(mask.apply(model), mask)
        assert report.per_module["a"] == 1.0
        assert report.per_module["b"] == 0.0
        assert report.average == 0.5

    def test_overall_matches_prune_amount(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        pruned, mask = prune_unstructured_global(model, amount=0.3)
        report = sparsity_report(pruned, mask)
        total = sum(model.params[w].size for w in mask.masks)
        assert 0.3 - 1 / total <= report.overall <= 0.3
        # module sizes differ, so the unweighted mean only tracks loosely
        assert abs(report.average - 0.3) < 0.05


class TestMemoryModel:
    def test_coo_bytes_direct(self):
        assert coo_memory_bytes((10, 10), 30, 4) == 2 * 8 * 30 + 30 * 4  # 600

    def test_coo_zero_nonzeros(self):
        assert coo_memory_bytes((5, 5), 0, 4) == 0

    def test_dense_vs_coo_comparison(self):
        dense = dense_memory_bytes((10, 10), 4)
        assert dense == 400
        assert coo_memory_bytes((10, 10), 30, 4) == 600 > dense

    def test_nze_bounds(self):
        with pytest.raises(ValueError):
            coo_memory_bytes((2, 2), -1, 4)
        with pytest.raises(ValueError):
            coo_memory_bytes((2, 2), 5, 4)

    def test_break_even_values(self):
        assert coo_break_even_amount(3, 4) == pytest.approx(0.8571, abs=1e-4)
        assert coo_break_even_amount(1, 8) == pytest.approx(0.5)

    def test_break_even_monotone_in_ndim(self):
        for elem in (1, 4, 8):
            vals = [coo_break_even_amount(d, elem) for d in range(1, 6)]
            assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_break_even_law_grid(self):
        """COO beats dense exactly when achieved sparsity exceeds break-even."""
        for ndim in (1, 2, 3):
            shape = (6,) * ndim
            total = 6 ** ndim
            for elem in (1, 4, 8):
                cutoff = coo_break_even_amount(ndim, elem)
                for nze in range(total + 1):
                    sparsity = 1 - nze / total
                    coo = coo_memory_bytes(shape, nze, elem)
                    dense = dense_memory_bytes(shape, elem)
                    assert (coo < dense) == (sparsity > cutoff)

    def test_memory_estimate_bundle(self):
        est = memory_estimate((10, 10), 30, 4)
        assert est.dense_bytes == 400
        assert est.coo_bytes == 600
        assert est.break_even_amount == pytest.approx(0.8)


class TestSparseExport:
    def test_sparse_larger_at_amount_03(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        pruned, mask = prune_unstructured_global(model, amount=0.3)
        assert sparse_export_size(pruned, mask) > dense_export_size(pruned, mask)

    def test_sparse_smaller_at_amount_09(self):
        model = build_embedding_model(TINY, "reduced", seed=0)
        pruned, mask = prune_unstructured_global(model, amount=0.9)
        assert sparse_export_size(pruned, mask) < dense_export_size(pruned, mask)

    def test_fully_dense_ratio(self):
        # every element nonzero: COO costs (3*8+4)/4 = 7x dense for ndim-3 f32
        w = np.full((4, 3, 5), 2.0)
        model = _conv_model({"c": w})
        mask = PruneMask({"c.weight": np.ones_like(w, dtype=np.float32)},
                         "unstructured")
        assert sparse_export_size(model, mask) == 7 * dense_export_size(model, mask)
