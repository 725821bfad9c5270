import numpy as np
import pytest

from londi.seeding import derive_rng, derive_seed, seed_sequence


class TestSeeding:
    def test_same_key_same_draws(self):
        assert derive_rng(0, 3, "eval").random() == derive_rng(0, 3, "eval").random()

    def test_streams_are_independent_keys(self):
        draws = {derive_rng(0, 1, s).integers(1 << 62) for s in ("train", "eval", "auc")}
        assert len(draws) == 3

    def test_adding_a_seed_leaves_others_unchanged(self):
        before = [derive_seed(7, s) for s in (1, 2)]
        after = [derive_seed(7, s) for s in (1, 2, 3)]
        assert after[:2] == before

    def test_root_changes_everything(self):
        assert derive_seed(0, 1) != derive_seed(1, 1)

    def test_integer_stream_label(self):
        assert seed_sequence(0, 1, 5).entropy == [0, 1, 5]

    def test_seed_range(self):
        s = derive_seed(0, 1)
        assert 0 <= s < 2 ** 32
        assert isinstance(s, int)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            seed_sequence(-1, 0)
