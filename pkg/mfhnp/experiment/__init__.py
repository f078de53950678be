from .constants import *
from .models import *
from .functions import *
from .tables import *
