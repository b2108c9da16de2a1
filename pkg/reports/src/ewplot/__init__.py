"""Static figure rendering for ewsim run directories."""

from .figures import FIGURES, ReportError, ReportSpec, render_reports

__version__ = "0.1.0"
