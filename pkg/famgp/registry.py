from abc import ABC, abstractmethod
from typing import Union

from famgp.exceptions import ParameterError
from famgp.mercer import ChebyshevKernel, MercerKernel, PeriodicKernel, SquaredExponentialKernel
from famgp.models import KernelKind


class Registry(ABC):
    @abstractmethod
    def register(self, instance):
        """Register an instance into the registry."""

    @abstractmethod
    def get(self, name):
        """Retrieve an instance by name."""

    @abstractmethod
    def register_default(self):
        """Register all default instances."""


class KernelRegistry(Registry):
    """
    Manages the registration and retrieval of kernel families.

    Attributes
    ----------
    kernels : dict
        Registered kernel families keyed by kernel kind.
    """

    def __init__(self):
        self.kernels = {}

    def register(self, instance: MercerKernel):
        """
        Registers a kernel family.

        Parameters
        ----------
        instance : MercerKernel
            The family to register. It must have a `name` attribute.

        Raises
        ------
        ValueError
            If the family has no `name` or a family with the same name is already registered.
        """
        kernel_name = getattr(instance, "name", None)
        if not kernel_name:
            raise ValueError(f"Kernel '{instance.__class__.__name__}' must have a 'name' attribute.")
        if kernel_name in self.kernels:
            raise ValueError(f"A kernel with the name '{kernel_name}' is already registered.")
        self.kernels[kernel_name] = instance

    def get(self, name: Union[KernelKind, str]) -> MercerKernel:
        """
        Retrieves a kernel family by kind.

        Raises
        ------
        ParameterError
            If no family is registered under ``name``.
        """
        key = name.value if isinstance(name, KernelKind) else name
        kernel = self.kernels.get(key)
        if kernel is None:
            raise ParameterError(f"Unknown kernel kind '{key}', expected one of {sorted(self.kernels)}.")
        return kernel

    def register_default(self):
        """
        Registers the squared-exponential, periodic and Chebyshev families.
        """
        self.register(SquaredExponentialKernel())
        self.register(PeriodicKernel())
        self.register(ChebyshevKernel())


kernel_registry = KernelRegistry()
kernel_registry.register_default()


class ExperimentRegistry(Registry):
    """
    Benchmark suites keyed by experiment id.

    Attributes
    ----------
    experiments : dict
        Callables taking an ExperimentConfig and returning a BenchReport.
    """

    def __init__(self):
        self.experiments = {}

    def register(self, instance, name: str = None):
        """
        Registers an experiment under ``name`` (default: its ``experiment_id`` attribute).

        Raises
        ------
        ValueError
            If the experiment has no id or the id is already registered.
        """
        name = name or getattr(instance, "experiment_id", None)
        if not name:
            raise ValueError(f"Experiment '{getattr(instance, '__name__', instance)}' must have an 'experiment_id'.")
        if name in self.experiments:
            raise ValueError(f"An experiment with the name '{name}' is already registered.")
        self.experiments[name] = instance

    def get(self, name: str):
        experiment = self.experiments.get(name)
        if experiment is None:
            raise ParameterError(f"Unknown experiment '{name}', expected one of {sorted(self.experiments)}.")
        return experiment

    def register_default(self):
        """Registers the benchmark suites of famgp.experiments."""
        from famgp.experiments import bench_correlation, bench_rmse_vs_eigs, bench_rmse_vs_samples, bench_scaling

        for experiment in (bench_scaling, bench_rmse_vs_samples, bench_rmse_vs_eigs, bench_correlation):
            self.register(experiment)
