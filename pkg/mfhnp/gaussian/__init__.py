from .constants import *
from .functions import *
