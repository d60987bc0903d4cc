import numpy as np
import pytest
import torch

from skdiscourse.pretraining import (
    MaskingOutcome,
    PretrainConfig,
    TokenSpec,
    extend_vocabulary,
    init_added_embeddings,
    load_token_specs,
    mask_for_mlm,
    run_domain_pretraining,
)
from skdiscourse.tokenization import MASK_ID, N_SPECIALS, Tokenizer

SPECS = [
    TokenSpec("longomaxta", donors=("largo", "tiempo")),
    TokenSpec("poncho plomo", donors=("poncho", "ropa")),
]


def extended_checkpoint(base):
    specs = [
        TokenSpec("longomaxta", donors=("para", "como")),
        TokenSpec("ashco vida", donors=("vida", "bien")),
    ]
    grown, report = extend_vocabulary(base, specs, seed=5)
    assert report.accepted == ["longomaxta", "ashco vida"]
    return init_added_embeddings(grown, specs), specs


class TestTokenSpecs:
    def test_empty_surface_rejected(self):
        with pytest.raises(ValueError):
            TokenSpec("  ", donors=("x",))

    def test_yaml_loading(self, tmp_path):
        path = tmp_path / "specs.yaml"
        path.write_text(
            "- surface: longomaxta\n  donors: [largo, tiempo]\n"
            "- surface: otro\n  donors: []\n",
            encoding="utf-8",
        )
        specs = load_token_specs(path)
        assert specs[0] == TokenSpec("longomaxta", donors=("largo", "tiempo"))
        assert specs[1].donors == ()

    def test_yaml_must_be_list(self, tmp_path):
        path = tmp_path / "specs.yaml"
        path.write_text("surface: x\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_token_specs(path)


class TestExtension:
    def test_existing_rows_byte_identical(self, base_checkpoint):
        grown, report = extend_vocabulary(base_checkpoint, SPECS, seed=1)
        assert set(report.accepted) <= {s.surface for s in SPECS}
        n_old = len(base_checkpoint.vocab)
        assert grown.vocab.tokens[:n_old] == base_checkpoint.vocab.tokens
        for name, tensor in base_checkpoint.state.items():
            # vocab-sized tensors grow; their first n_old rows must not move
            if tensor.shape and tensor.shape[0] == n_old:
                assert torch.equal(grown.state[name][:n_old], tensor), name
            else:
                assert torch.equal(grown.state[name], tensor), name

    def test_single_token_surface_rejected(self, base_checkpoint):
        # any plain token already in the vocabulary
        existing = base_checkpoint.vocab.tokens[N_SPECIALS + 1]
        specs = [TokenSpec(existing, donors=("x",))]
        grown, report = extend_vocabulary(base_checkpoint, specs)
        assert report.accepted == []
        assert report.rejected[0][0] == existing
        assert "single token" in report.rejected[0][1]
        assert len(grown.vocab) == len(base_checkpoint.vocab)

    def test_empty_donor_list_rejected(self, base_checkpoint):
        grown, report = extend_vocabulary(
            base_checkpoint, [TokenSpec("nuevapalabra", donors=())]
        )
        assert report.accepted == []
        assert "donor" in report.rejected[0][1]

    def test_duplicate_surfaces_raise(self, base_checkpoint):
        specs = [
            TokenSpec("nuevapalabra", donors=("x",)),
            TokenSpec("nuevapalabra", donors=("y",)),
        ]
        with pytest.raises(ValueError, match="duplicate"):
            extend_vocabulary(base_checkpoint, specs)

    def test_extension_records_lineage(self, base_checkpoint):
        grown, _ = extend_vocabulary(base_checkpoint, SPECS, seed=1)
        assert grown.parent_id == base_checkpoint.checkpoint_id
        assert grown.base_vocab_size == base_checkpoint.base_vocab_size


class TestDonorSeeding:
    def test_added_rows_are_donor_means(self, base_checkpoint):
        seeded, specs = extended_checkpoint(base_checkpoint)
        tokenizer = Tokenizer(seeded.vocab)
        emb = seeded.state["token_embeddings.weight"]
        for spec in specs:
            donor_vectors = []
            for donor in spec.donors:
                ids = [i for i in tokenizer.tokenize(donor) if i >= N_SPECIALS]
                donor_vectors.append(emb[ids].mean(dim=0))
            expected = torch.stack(donor_vectors).mean(dim=0)
            row = emb[seeded.vocab.index[spec.surface]]
            assert torch.allclose(row, expected, atol=1e-6)

    def test_other_rows_untouched_by_seeding(self, base_checkpoint):
        grown, _ = extend_vocabulary(base_checkpoint, SPECS, seed=1)
        seeded = init_added_embeddings(grown, SPECS)
        n_old = len(base_checkpoint.vocab)
        assert torch.equal(
            seeded.state["token_embeddings.weight"][:n_old],
            grown.state["token_embeddings.weight"][:n_old],
        )

    def test_unknown_surface_raises(self, base_checkpoint):
        with pytest.raises(ValueError, match="extend_vocabulary"):
            init_added_embeddings(
                base_checkpoint, [TokenSpec("jamasvista", donors=("x",))]
            )

    def test_unresolvable_donor_raises(self, base_checkpoint):
        grown, _ = extend_vocabulary(
            base_checkpoint, [TokenSpec("nuevapalabra", donors=("中中",))]
        )
        with pytest.raises(ValueError, match="donor"):
            init_added_embeddings(grown, [TokenSpec("nuevapalabra", donors=("中中",))])


class TestMasking:
    def test_rate_and_split_on_large_sample(self):
        # big enough that the 80/10/10 split is tight
        rng = np.random.default_rng(0)
        ids = rng.integers(N_SPECIALS, 500, size=120_000).tolist()
        out = mask_for_mlm(ids, vocab_size=500, mask_rate=0.15, seed=1)
        assert out.n_selected >= 10_000
        assert out.n_eligible == len(ids)
        assert abs(out.n_selected / out.n_eligible - 0.15) < 0.01
        assert abs(out.n_masked / out.n_selected - 0.80) < 0.02
        assert abs(out.n_random / out.n_selected - 0.10) < 0.02
        assert abs(out.n_kept / out.n_selected - 0.10) < 0.02
        assert out.n_masked + out.n_random + out.n_kept == out.n_selected

    def test_specials_never_selected(self):
        ids = [0, 1, 2, 3, 4, 5] * 200
        out = mask_for_mlm(ids, vocab_size=500, mask_rate=1.0, seed=0)
        assert out.n_selected == 0
        assert (out.input_ids == np.asarray(ids)).all()
        assert (out.targets == -100).all()

    def test_targets_hold_original_ids(self):
        ids = list(range(N_SPECIALS, 106))
        out = mask_for_mlm(ids, vocab_size=200, mask_rate=0.5, seed=3)
        selected = out.targets != -100
        assert (out.targets[selected] == np.asarray(ids)[selected]).all()
        # unselected positions pass through uncorrupted
        assert (out.input_ids[~selected] == np.asarray(ids)[~selected]).all()

    def test_masked_positions_become_mask_token(self):
        ids = list(range(N_SPECIALS, 5006))
        out = mask_for_mlm(ids, vocab_size=6000, mask_rate=0.3, seed=7)
        assert (out.input_ids == MASK_ID).sum() == out.n_masked

    def test_random_replacements_are_non_special(self):
        ids = list(range(N_SPECIALS, 5006))
        out = mask_for_mlm(ids, vocab_size=6000, mask_rate=0.9, seed=11)
        changed = (out.targets != -100) & (out.input_ids != MASK_ID)
        replaced = out.input_ids[changed & (out.input_ids != np.asarray(ids))]
        assert (replaced >= N_SPECIALS).all()
        assert (replaced < 6000).all()

    def test_deterministic_for_seed(self):
        ids = list(range(N_SPECIALS, 300))
        a = mask_for_mlm(ids, vocab_size=400, mask_rate=0.15, seed=9)
        b = mask_for_mlm(ids, vocab_size=400, mask_rate=0.15, seed=9)
        assert (a.input_ids == b.input_ids).all()
        assert (a.targets == b.targets).all()

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            mask_for_mlm([10, 11], vocab_size=20, mask_rate=1.5)

    def test_unmaskable_vocab_rejected(self):
        with pytest.raises(ValueError):
            mask_for_mlm([1, 2], vocab_size=N_SPECIALS)


class TestPretraining:
    def test_zero_epochs_is_identity(self, base_checkpoint, base_texts):
        config = PretrainConfig(epochs=0, seed=0)
        out, log = run_domain_pretraining(base_checkpoint, base_texts[:50], config)
        for name, tensor in base_checkpoint.state.items():
            assert torch.equal(out.state[name], tensor), name
        assert log.steps == []
        assert log.heldout_before is not None

    def test_heldout_loss_decreases(self, pretrain_run):
        _, log = pretrain_run
        assert log.heldout_before is not None
        assert log.heldout_after is not None
        assert log.heldout_after < log.heldout_before

    def test_reproducible_for_seed(self, base_checkpoint, base_texts):
        config = PretrainConfig(epochs=1, batch_size=16, learning_rate=1e-3,
                                max_seq_len=48, seed=4)
        a, _ = run_domain_pretraining(base_checkpoint, base_texts[:80], config)
        b, _ = run_domain_pretraining(base_checkpoint, base_texts[:80], config)
        for name, tensor in a.state.items():
            assert torch.allclose(tensor, b.state[name], atol=1e-4), name

    def test_warns_when_added_tokens_never_occur(self, base_checkpoint, base_texts):
        seeded, _ = extended_checkpoint(base_checkpoint)
        config = PretrainConfig(epochs=1, batch_size=16, max_seq_len=32, seed=0)
        _, log = run_domain_pretraining(seeded, base_texts[:40], config)
        assert any("added tokens occur" in w for w in log.warnings)

    def test_no_warning_when_added_tokens_occur(self, base_checkpoint, base_texts):
        seeded, _ = extended_checkpoint(base_checkpoint)
        texts = base_texts[:40] + ["longomaxta vuelve", "dice ashco vida hoy"]
        config = PretrainConfig(epochs=1, batch_size=16, max_seq_len=32, seed=0)
        _, log = run_domain_pretraining(seeded, texts, config)
        assert not any("added tokens occur" in w for w in log.warnings)

    def test_empty_corpus_rejected(self, base_checkpoint):
        with pytest.raises(ValueError, match="empty"):
            run_domain_pretraining(base_checkpoint, [], PretrainConfig(epochs=1))

    def test_result_kind_and_lineage(self, pretrain_run, base_checkpoint):
        ckpt, _ = pretrain_run
        assert ckpt.kind == "domain_pretrained"
        assert ckpt.parent_id == base_checkpoint.checkpoint_id
