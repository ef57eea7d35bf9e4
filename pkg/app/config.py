"""
Per-command run configurations.

Each command has a pydantic model that rejects unknown keys and checks the numerical
preconditions before any work starts.
"""

from typing import Dict, List, Literal, Optional, Type

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_OUTPUT_ROOT = "runs"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output_root: str = DEFAULT_OUTPUT_ROOT
    omega: float = Field(default=1.0, gt=0)

    def hashed_fields(self) -> Dict:
        """Configuration without the output location, used for the run directory name."""
        return self.model_dump(mode="json", exclude={"output_root"})


def _even_cell(L: int) -> int:
    if L < 2 or L % 2:
        raise ValueError(f"unit cell size must be even and >= 2, got {L}")
    return L


class OrbitConfig(RunConfig):
    L: int = 2
    dt: float = Field(default=1e-3, gt=0)
    t_end: float = Field(default=40.0, gt=0)
    perturbation: float = Field(default=0.0, ge=0, lt=1.5)
    return_fraction: float = Field(default=0.05, gt=0, lt=1)

    @field_validator("L")
    @classmethod
    def check_cell(cls, value: int) -> int:
        return _even_cell(value)


class LyapunovConfig(RunConfig):
    L: int = 30
    Ls: Optional[List[int]] = None
    steps_per_eighth: int = Field(default=250, ge=1)
    method: Literal["pade", "taylor6"] = "pade"
    omega_orbit: Optional[float] = Field(default=None, gt=0)
    orbit_dt: float = Field(default=1e-3, gt=0)
    orbit_t_end: float = Field(default=40.0, gt=0)
    workers: int = Field(default=1, ge=1)

    @field_validator("L")
    @classmethod
    def check_cell(cls, value: int) -> int:
        return _even_cell(value)

    @field_validator("Ls")
    @classmethod
    def check_sweep(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None:
            if not value:
                raise ValueError("sweep needs at least one unit cell size")
            for L in value:
                _even_cell(L)
        return value

    def sweep(self) -> List[int]:
        """Unit-cell sizes to compute, always including the headline L."""
        return sorted(set(self.Ls or [self.L]) | {self.L})


class WignerConfig(RunConfig):
    n1: int = Field(default=400, ge=16)
    n2: int = Field(default=400, ge=16)
    rydberg_site: Literal[1, 2] = 2
    core_fraction: float = Field(default=1e-3, gt=0, le=1)


class TWAConfig(RunConfig):
    seed: int
    n_samples: int = Field(default=2000, ge=1)
    L: int = 2
    rydberg_site: Literal[1, 2] = 2
    t_end: float = Field(default=20.0, gt=0)
    dt_out: float = Field(default=0.1, gt=0)
    dt: float = Field(default=1e-2, gt=0)

    @field_validator("L")
    @classmethod
    def check_cell(cls, value: int) -> int:
        return _even_cell(value)


class QuantumConfig(RunConfig):
    N: int = Field(default=16, ge=2, le=32)
    boundary: Literal["open", "periodic"] = "open"
    method: Literal["krylov", "rk4"] = "krylov"
    dt: float = Field(default=0.1, gt=0)
    dt_out: float = Field(default=0.05, gt=0)
    t_end: float = Field(default=100.0, gt=0)
    site: Optional[int] = Field(default=None, ge=0)
    cut: Optional[int] = Field(default=None, ge=1)
    max_basis_dim: int = Field(default=2_000_000, ge=1)

    @model_validator(mode="after")
    def check_positions(self) -> "QuantumConfig":
        if self.site is not None and self.site >= self.N:
            raise ValueError(f"site must be below N={self.N}, got {self.site}")
        if self.cut is not None and self.cut >= self.N:
            raise ValueError(f"cut must be below N={self.N}, got {self.cut}")
        return self


class ReportConfig(RunConfig):
    ks: Optional[str] = None
    width: Optional[str] = None
    fits: Optional[str] = None
    delta_theta0: Optional[float] = Field(default=None, gt=0, lt=1)


CONFIG_MODELS: Dict[str, Type[RunConfig]] = {
    "orbit": OrbitConfig,
    "lyapunov": LyapunovConfig,
    "wigner": WignerConfig,
    "twa": TWAConfig,
    "quantum": QuantumConfig,
    "report": ReportConfig,
}
