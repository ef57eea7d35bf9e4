"""
Click command group: `pxpscars <command> [--config FILE] [flags]`.

Flags default to None so that only options given on the command line override the
configuration file.
"""

import sys
from typing import Dict, Optional

import click
from pydantic import ValidationError

from app import create_config
from app.runner import report_failure, run
from services import set_log_level
from services.exceptions import PXPScarsError

config_option = click.option('--config', 'config_file', type=click.Path(dir_okay=False),
                             default=None, help='JSON configuration file.')
output_option = click.option('--output-root', default=None, help='Directory holding the run directories.')
omega_option = click.option('--omega', type=float, default=None, help='Rabi frequency.')


def execute(command: str, config_file: Optional[str], overrides: Dict) -> None:
    """Build the configuration, run the command and exit with its status."""
    try:
        config = create_config(command, config_file, overrides)
    except (PXPScarsError, ValidationError) as error:
        sys.exit(report_failure(error))
    sys.exit(run(command, config))


@click.group()
@click.option('--log-level', default=None,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Logging level for this invocation.')
def main(log_level: Optional[str]) -> None:
    """Semiclassical and exact dynamics of the PXP chain."""
    if log_level:
        set_log_level(log_level)


@main.command()
@config_option
@output_option
@omega_option
@click.option('--L', 'L', type=int, default=None, help='Unit-cell size.')
@click.option('--dt', type=float, default=None, help='RK4 step.')
@click.option('--t-end', type=float, default=None, help='Integration time.')
@click.option('--perturbation', type=float, default=None, help='Offset of theta_2 from the Z2 corner.')
def orbit(config_file, output_root, omega, L, dt, t_end, perturbation):
    """Integrate the Z2 orbit and measure its period."""
    execute("orbit", config_file, {'output_root': output_root, 'omega': omega, 'L': L, 'dt': dt,
                                   't_end': t_end, 'perturbation': perturbation})


@main.command()
@config_option
@output_option
@omega_option
@click.option('--L', 'L', type=int, default=None, help='Headline unit-cell size.')
@click.option('--Ls', 'Ls', type=int, multiple=True, help='Unit-cell sizes of the sweep (repeatable).')
@click.option('--steps-per-eighth', type=int, default=None, help='Midpoint steps per eighth period.')
@click.option('--method', type=click.Choice(['pade', 'taylor6']), default=None, help='Step exponential.')
@click.option('--omega-orbit', type=float, default=None, help='Orbit frequency; measured when omitted.')
@click.option('--workers', type=int, default=None, help='Processes for the sweep.')
def lyapunov(config_file, output_root, omega, L, Ls, steps_per_eighth, method, omega_orbit, workers):
    """Lyapunov spectra and KS entropy of the Z2 orbit."""
    execute("lyapunov", config_file, {'output_root': output_root, 'omega': omega, 'L': L,
                                      'Ls': list(Ls) or None, 'steps_per_eighth': steps_per_eighth,
                                      'method': method, 'omega_orbit': omega_orbit, 'workers': workers})


@main.command()
@config_option
@output_option
@click.option('--n1', type=int, default=None, help='Quadrature nodes along theta1.')
@click.option('--n2', type=int, default=None, help='Quadrature nodes along theta2.')
@click.option('--core-fraction', type=float, default=None, help='Mass share of the peak neighbourhood.')
@click.option('--rydberg-site', type=click.Choice(['1', '2']), default=None, help='Excited site of the cell.')
def wigner(config_file, output_root, n1, n2, rydberg_site, core_fraction):
    """Constrained and unconstrained Wigner grids and the peak width."""
    execute("wigner", config_file, {'output_root': output_root, 'n1': n1, 'n2': n2,
                                    'rydberg_site': int(rydberg_site) if rydberg_site else None,
                                    'core_fraction': core_fraction})


@main.command()
@config_option
@output_option
@omega_option
@click.option('--seed', type=int, default=None, help='Ensemble seed (required).')
@click.option('--n-samples', type=int, default=None, help='Number of Wigner samples.')
@click.option('--L', 'L', type=int, default=None, help='Unit-cell size.')
@click.option('--t-end', type=float, default=None, help='Final time.')
@click.option('--dt-out', type=float, default=None, help='Output spacing.')
@click.option('--dt', type=float, default=None, help='RK4 step.')
def twa(config_file, output_root, omega, seed, n_samples, L, t_end, dt_out, dt):
    """Truncated-Wigner ensemble evolution of the Rydberg density."""
    execute("twa", config_file, {'output_root': output_root, 'omega': omega, 'seed': seed,
                                 'n_samples': n_samples, 'L': L, 't_end': t_end, 'dt_out': dt_out, 'dt': dt})


@main.command()
@config_option
@output_option
@omega_option
@click.option('--N', 'N', type=int, default=None, help='Chain length.')
@click.option('--boundary', type=click.Choice(['open', 'periodic']), default=None, help='Boundary conditions.')
@click.option('--method', type=click.Choice(['krylov', 'rk4']), default=None, help='Propagator.')
@click.option('--dt', type=float, default=None, help='Largest propagation step.')
@click.option('--dt-out', type=float, default=None, help='Output spacing.')
@click.option('--t-end', type=float, default=None, help='Final time.')
@click.option('--site', type=int, default=None, help='Site of the Rydberg density, default N/2.')
@click.option('--cut', type=int, default=None, help='Bond of the entropy, default N/2.')
def quantum(config_file, output_root, omega, N, boundary, method, dt, dt_out, t_end, site, cut):
    """Exact Z2 quench: density, entropy and echo with decay fits."""
    execute("quantum", config_file, {'output_root': output_root, 'omega': omega, 'N': N, 'boundary': boundary,
                                     'method': method, 'dt': dt, 'dt_out': dt_out, 't_end': t_end,
                                     'site': site, 'cut': cut})


@main.command()
@config_option
@output_option
@click.option('--ks', type=click.Path(dir_okay=False), default=None, help='ks.json of a lyapunov run.')
@click.option('--width', type=click.Path(dir_okay=False), default=None, help='width.json of a wigner run.')
@click.option('--fits', type=click.Path(dir_okay=False), default=None, help='fits.json of a quantum run.')
@click.option('--delta-theta0', type=float, default=None, help='Width overriding width.json.')
def report(config_file, output_root, ks, width, fits, delta_theta0):
    """Compare the semiclassical escape rate with the quantum decay rates."""
    execute("report", config_file, {'output_root': output_root, 'ks': ks, 'width': width, 'fits': fits,
                                    'delta_theta0': delta_theta0})


if __name__ == '__main__':
    main()
