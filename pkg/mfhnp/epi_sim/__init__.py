from .constants import *
from .scenarios import *
from .functions import *
