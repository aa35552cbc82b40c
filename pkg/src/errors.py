"""
Errores de los análisis, agrupados por código de salida del CLI:
2 para entradas inválidas, 3 para fallas numéricas.
"""

from __future__ import annotations
from typing import Optional


class AnalysisWarning(UserWarning):
    """Advertencia que termina en el arreglo `warnings` del reporte."""


class AgreementError(Exception):
    """
    Base de todos los errores del toolkit.

    :param message: Descripción legible (una línea).
    :type message: str
    """

    exit_code: int = 1

    def __init__(self, message: str = "") -> None:
        super().__init__(message)
        self.message: str = message

    @property
    def name(self) -> str:
        return type(self).__name__

    def diagnostic(self) -> str:
        """Línea para stderr: `error: <Nombre>: <mensaje>`."""
        return f"error: {self.name}: {self.message}" if self.message else f"error: {self.name}"


class InputError(AgreementError, ValueError):
    exit_code = 2


class NumericalError(AgreementError, ArithmeticError):
    exit_code = 3


# region Datos
class EmptyInput(InputError):
    pass


class DuplicateKey(InputError):
    pass


class NonFiniteValue(InputError):
    def __init__(self, message: str = "", line: Optional[int] = None) -> None:
        if line is not None:
            message = f"línea {line}: {message}" if message else f"línea {line}"
        super().__init__(message)
        self.line: Optional[int] = line


class MissingPairMember(InputError):
    pass


class AmbiguousReplicates(InputError):
    pass


# region Ingesta
class BadHeader(InputError):
    pass


class BadRow(InputError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"línea {line}: {reason}")
        self.line: int = line
        self.reason: str = reason


class UnknownOutcomeToken(InputError):
    pass


class DuplicateCase(InputError):
    pass


class NoEntriesAtGranularity(InputError):
    pass


# region Estadística
class TooFewValues(InputError):
    pass


class TooFewPairs(InputError):
    pass


class BadProbability(InputError):
    pass


class BadDegreesOfFreedom(InputError):
    pass


class DegenerateVariance(NumericalError):
    pass


# region ANOVA / exactitud
class UnbalancedDesign(InputError):
    pass


class TooFewLevels(InputError):
    pass


class MissingTerm(InputError):
    pass


class ZeroDf(InputError):
    pass


class TooFewSamples(InputError):
    pass


class MissingTruth(InputError):
    pass


class IncompleteGrid(InputError):
    pass


# region Modelo mixto
class RankDeficientDesign(InputError):
    pass


class NonConvergence(NumericalError):
    pass


# region Simulación
class InvalidProcessSpec(InputError):
    pass


class UnknownEstimator(InputError):
    pass


class EstimatorFailure(NumericalError):
    """
    Falla de un estimador dentro de una réplica Monte Carlo.

    Hereda el código de salida de la causa.

    :param replicate: Índice de la réplica que falló.
    :type replicate: int
    :param cause: Excepción original.
    :type cause: Exception
    """

    def __init__(self, replicate: int, cause: Exception) -> None:
        cause_name: str = type(cause).__name__
        super().__init__(f"réplica {replicate}: {cause_name}: {cause}")
        self.replicate: int = replicate
        self.cause: Exception = cause
        self.exit_code = getattr(cause, "exit_code", NumericalError.exit_code)


# region Salida
class IoFailure(InputError):
    pass
