"""tirkit: tool-integrated reasoning orchestration.

Generation loop with sandboxed code execution, generative solution
selection, majority/pass evaluation metrics, dataset curation filters, and
a time-budgeted competition scheduler, all runnable against real HTTP
completion backends or a deterministic scripted mock.
"""

__version__ = "0.1.0"
