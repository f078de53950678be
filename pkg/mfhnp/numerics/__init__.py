from .constants import *
from .tensor import *
from .mlp import *
from .adam import *
from .checkpoint import *
