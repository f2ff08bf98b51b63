"""Walk through the building blocks: channel shuffle, channel attention,
and the residual dual-shuffle attention block.

Run from the repository root:

    python3 demos/01_building_blocks.py
"""

import torch

from shuffle_histo import (
    BlockConfig,
    ChannelAttention,
    ResidualDualShuffleAttentionBlock,
    channel_shuffle,
)


def show_channel_shuffle() -> None:
    print("== channel shuffle ==")
    # One batch item, 6 channels, 1x1 spatial so each channel is a single
    # value and the permutation is easy to read off.
    x = torch.arange(6, dtype=torch.float32).view(1, 6, 1, 1)
    y = channel_shuffle(x, groups=2)
    print("input channels: ", x.flatten().tolist())
    print("shuffled (g=2): ", y.flatten().tolist())

    # Shuffling with g then with C//g undoes the permutation.
    z = channel_shuffle(y, groups=3)
    print("shuffle g=2 then g=3 restores:", torch.equal(z, x))
    print()


def show_channel_attention() -> None:
    print("== channel attention ==")
    torch.manual_seed(0)
    att = ChannelAttention(channels=8, reduction=4)
    att.eval()
    x = torch.randn(2, 8, 5, 5)
    with torch.no_grad():
        y = att(x)
    # The gate is a sigmoid per channel, so attention can only scale
    # activations toward zero, never amplify them.
    print("max |input| :", float(x.abs().max()))
    print("max |output|:", float(y.abs().max()))
    print("never amplifies:", bool((y.abs() <= x.abs() + 1e-7).all()))
    print()


def show_residual_block() -> None:
    print("== residual dual-shuffle attention block ==")
    cfg = BlockConfig(channels=16, groups=4, attention_reduction=4, m=2)
    block = ResidualDualShuffleAttentionBlock(cfg)
    block.eval()

    x = torch.randn(1, 16, 14, 14)
    with torch.no_grad():
        y = block(x)
    print("input shape :", tuple(x.shape))
    print("output shape:", tuple(y.shape), "(channels and size preserved)")

    n_params = sum(p.numel() for p in block.parameters())
    print("parameters  :", n_params)

    # With every unit conv and the projections zeroed, the residual path
    # is all that remains and the block becomes the identity.
    with torch.no_grad():
        for unit in block.units:
            unit.conv_in.weight.zero_()
            unit.conv_dw.weight.zero_()
            unit.conv_out.weight.zero_()
        for proj in block.projections:
            proj.weight.zero_()
            proj.bias.zero_()
        y0 = block(x)
    print("zeroed branches give identity:", torch.equal(y0, x))
    print()


def main() -> None:
    show_channel_shuffle()
    show_channel_attention()
    show_residual_block()


if __name__ == "__main__":
    main()
