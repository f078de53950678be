from .constants import *
from .models import *
from .functions import *
