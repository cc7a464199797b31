"""Run profiles: the full-size setup and a desk-scale one for quick runs."""
from dataclasses import dataclass, replace

from .config import PROFILES, CameraConfig, CommandConfig, SimConfig
from .errors import ConfigError
from .nn.gru import GruConfig, GruTrainConfig
from .nn.vit import VitConfig, VitTrainConfig
from .sim.terrain import KINDS, Terrain

STRAIGHT_TERRAINS = ("slippery", "incline")


@dataclass(frozen=True)
class Profile:
    name: str
    camera: CameraConfig
    train_duration: float
    test_duration: float
    vit: VitConfig
    vit_train: VitTrainConfig
    vit_images: int          # depth images sampled from the training set for the ViT
    gru: GruConfig
    gru_train: GruTrainConfig
    train_per_terrain: int = 4

    def with_seed(self, seed):
        """Copy with both training stages seeded from ``seed``."""
        return replace(self, vit_train=replace(self.vit_train, seed=seed),
                       gru_train=replace(self.gru_train, seed=seed))


PAPER = Profile(
    name="paper",
    camera=CameraConfig(),
    train_duration=90.0,
    test_duration=90.0,
    vit=VitConfig(),
    vit_train=VitTrainConfig(epochs=100),
    vit_images=8192,
    gru=GruConfig(),
    gru_train=GruTrainConfig(epochs=100),
)

SMALL = Profile(
    name="small",
    camera=CameraConfig(height=64, width=64),
    train_duration=12.0,
    test_duration=12.0,
    vit=VitConfig(image_height=64, image_width=64, patch_size=8, depth=2, mlp_ratio=2),
    vit_train=VitTrainConfig(epochs=8),
    vit_images=512,
    gru=GruConfig(hidden_size=64, n_layers=2),
    gru_train=GruTrainConfig(lr=1e-3, epochs=6, schedule="cosine"),
)

_BY_NAME = {"paper": PAPER, "small": SMALL}


def get_profile(name):
    if name not in PROFILES:
        raise ConfigError("profile", f"unknown profile {name!r}; expected one of {PROFILES}")
    return _BY_NAME[name]


def trajectory_config(profile, kind, seed, duration, base=None):
    """Simulation config for one trajectory on terrain ``kind``."""
    base = base or SimConfig()
    mode = "straight" if kind in STRAIGHT_TERRAINS else "random"
    return replace(base, seed=seed, duration=duration, camera=profile.camera,
                   terrain=Terrain.preset(kind, seed=base.terrain.seed),
                   command=replace(base.command, mode=mode))


def suite(profile, seed=0, base=None):
    """``[(name, SimConfig)]``: ``train_per_terrain`` training runs per terrain
    plus one held-out test run per terrain, all with distinct seeds."""
    out = []
    stride = profile.train_per_terrain + 1
    for t, kind in enumerate(KINDS):
        for j in range(profile.train_per_terrain):
            s = seed * 1000 + t * stride + j
            out.append((f"train_{kind}_{j}", trajectory_config(profile, kind, s, profile.train_duration, base)))
        s = seed * 1000 + t * stride + profile.train_per_terrain
        out.append((f"test_{kind}", trajectory_config(profile, kind, s, profile.test_duration, base)))
    return out
