import numpy as np
import pytest

from dbmif import autodiff as ad
from dbmif.autodiff import Tensor
from dbmif.discriminators import (
    SUBBAND_LAYERS,
    WAVEFORM_LAYERS,
    DiscriminatorEnsemble,
    SubbandDiscriminator,
    WaveformDiscriminator,
    scale_layers,
)
from dbmif.errors import ConfigurationError, PreconditionError


@pytest.fixture(scope="module")
def ensemble():
    return DiscriminatorEnsemble(seed=0)


@pytest.fixture(scope="module")
def one_second_outputs(ensemble):
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 16000)).astype(np.float32) * 0.1)
    with ad.no_grad():
        return ensemble(x)


def test_waveform_channels_follow_table():
    assert [c for _, c, *_ in WAVEFORM_LAYERS] == [16, 64, 256, 1024, 1024, 1024, 1]


def test_waveform_score_frames(one_second_outputs):
    out = one_second_outputs[0]
    assert out.score.shape == (1, 1, 63)
    assert len(out.features) == 6


def test_subband_score_frames(one_second_outputs):
    for out in one_second_outputs[1:]:
        assert out.score.shape == (1, 1, 125)
        assert len(out.features) == 7


def test_ensemble_order_and_dilations(ensemble):
    assert isinstance(ensemble.members[0], WaveformDiscriminator)
    assert [m.dilation for m in ensemble.members[1:]] == [1, 2, 3]
    for member in ensemble.members[1:]:
        assert {layer["dilation"] for layer in member.describe()} == {member.dilation}


def test_subband_copies_share_architecture(ensemble):
    strip = [[{k: v for k, v in layer.items() if k not in ("dilation", "padding")} for layer in m.describe()]
             for m in ensemble.members[1:]]
    assert strip[0] == strip[1] == strip[2]


def test_group_width_layer_two(ensemble):
    layer2 = ensemble.k1.layer2
    assert layer2.in_channels // layer2.groups == 9


def test_same_padding(ensemble):
    for member in ensemble.members:
        for conv in member.layers:
            assert conv.padding == conv.dilation * (conv.kernel_size - 1) // 2


def test_parameter_names(ensemble):
    names = [n for n, _ in ensemble.named_parameters("disc")]
    assert "disc.k0.layer1.direction" in names
    assert "disc.k3.layer8.magnitude" in names
    assert "disc.k2.layer5.bias" in names


def test_zero_input_zero_scores():
    disc = DiscriminatorEnsemble(seed=1, width_scale=0.25)
    for out in disc(Tensor(np.zeros((1, 1, 8192)))):
        assert not out.score.data.any()


def test_direction_rescale_leaves_output(rng):
    disc = SubbandDiscriminator(2, rng, width_scale=0.25)
    x = Tensor(rng.standard_normal((1, 1, 1024)))
    with ad.precision(64):
        before = disc(x).score.data.copy()
        disc.layer3.direction.data = disc.layer3.direction.data * 7.5
        after = disc(x).score.data
    np.testing.assert_allclose(after, before, rtol=1e-5, atol=1e-9)


def test_deterministic(rng):
    x = Tensor(rng.standard_normal((2, 1, 8192)).astype(np.float32))
    disc = DiscriminatorEnsemble(seed=2, width_scale=0.25)
    first = [o.score.data.copy() for o in disc(x)]
    second = [o.score.data for o in disc(x)]
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_invalid_dilation(rng):
    with pytest.raises(ConfigurationError):
        SubbandDiscriminator(4, rng)


def test_too_short_input(rng):
    disc = WaveformDiscriminator(rng, width_scale=0.25)
    with pytest.raises(PreconditionError, match="receptive field"):
        disc(Tensor(np.zeros((1, 1, disc.receptive_field() - 1))))


def test_scaled_layers_keep_groups():
    for layers, fixed in ((WAVEFORM_LAYERS, 1), (SUBBAND_LAYERS, 4)):
        scaled = scale_layers(layers, 0.25, fixed)
        assert scaled[0][0] == fixed and scaled[-1][1] == 1
        for c_in, c_out, _, _, g in scaled:
            assert c_in % g == 0 and c_out % g == 0
        assert [(k, s, g) for *_, k, s, g in scaled] == [(k, s, g) for *_, k, s, g in layers]
