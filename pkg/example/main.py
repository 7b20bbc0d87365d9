# License: CC0-1.0

import json
from pathlib import Path

import numpy as np

from geofuse import (
    Boost,
    ChannelSpec,
    EncoderBlockWeights,
    GeoTransform,
    Grid,
    NormRule,
    PatchEmbedding,
    PriorConfig,
    Projection,
    StubLocationEncoder,
    TagSelector,
    binary_mask,
    build_token_sequence,
    encoder_block_forward,
    generate_prior,
    init_pos_embed,
    init_registers,
    load_builtin_classmap,
    parse_geojson,
    patchify,
    proc_stack,
    rasterize_classes,
    write_ascii_grid,
    write_gft,
)

SIZE = 32


def synthetic_geojson() -> bytes:
    collection = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {"highway": "primary"},
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[0.0, 16.0], [32.0, 16.0]],
                },
            },
            {
                "type": "Feature",
                "properties": {"natural": "water"},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [
                        [
                            [20.0, 2.0],
                            [30.0, 2.0],
                            [30.0, 10.0],
                            [20.0, 10.0],
                            [20.0, 2.0],
                        ]
                    ],
                },
            },
        ],
    }
    return json.dumps(collection).encode("utf-8")


def main():
    import argparse

    parser = argparse.ArgumentParser()
    parser.add_argument("output_dir", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lat", type=float, default=48.2)
    parser.add_argument("--lon", type=float, default=16.4)
    args = parser.parse_args()

    output_dir: Path = args.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    seed: int = args.seed

    transform = GeoTransform.from_origin(0.0, float(SIZE), 1.0)
    layer = parse_geojson(synthetic_geojson())
    class_map = load_builtin_classmap("enviroatlas")

    fine = rasterize_classes(layer, class_map, transform, SIZE, SIZE)
    (output_dir / "fine.asc").write_bytes(write_ascii_grid(fine))
    counts = np.bincount(fine.data.ravel())
    print(f"Rasterized {len(layer.features)} features, class counts {counts}")

    # coarse labels: developed north half, undeveloped south half
    coarse_data = np.zeros((SIZE, SIZE), dtype=np.int64)
    coarse_data[: SIZE // 2] = 1
    coarse = Grid(
        width=SIZE,
        height=SIZE,
        transform=transform,
        data=coarse_data,
        kind="categorical",
    )

    roads = binary_mask(layer, TagSelector(key="highway"), 3.0, transform, SIZE, SIZE)
    prior = generate_prior(
        PriorConfig(
            coarse=coarse,
            pairs=[(coarse, fine)],
            n_coarse=2,
            n_fine=len(class_map.palette()),
            blur_sigma=2.0,
            boosts=[Boost(mask=roads, target_class=3, source="highway=*")],
        )
    )
    assert prior.manifest is not None
    print(f"Prior manifest: {prior.manifest.digest()[:16]}")

    rng = np.random.default_rng(seed)
    optical = [
        ChannelSpec(
            grid=Grid(
                width=SIZE,
                height=SIZE,
                transform=transform,
                data=rng.integers(0, 256, size=(SIZE, SIZE)).astype(np.float64),
            ),
            rule=NormRule(kind="byte255"),
            source=f"band{band}",
        )
        for band in range(3)
    ]
    tensor = proc_stack(optical, prior)
    (output_dir / "stack.gft").write_bytes(write_gft(tensor))
    print(f"Stacked {tensor.n_channels} channels {tensor.shape[0]}x{tensor.shape[1]}")

    dim = 64
    embed = PatchEmbedding.initialize(tensor.n_channels, 8, dim=dim, seed=seed)
    patches = patchify(tensor.data.astype(np.float64), 8, embed)
    loc = StubLocationEncoder(seed=seed).encode(args.lat, args.lon)
    sequence = build_token_sequence(
        patches,
        init_registers(1, dim, seed=seed + 1)[0],
        init_pos_embed(patches.shape[0] + 2, dim, seed=seed + 4),
        loc256=loc,
        proj=Projection.initialize(dim, seed=seed + 3),
    )
    out = encoder_block_forward(
        sequence, EncoderBlockWeights.initialize(dim, 4 * dim, seed=seed + 5)
    )
    print(f"Encoded {len(sequence)} tokens, cls norm {np.linalg.norm(out[0]):.4f}")


if __name__ == "__main__":
    main()
