"""
Configuraciones globales del entorno de experimentos CAD

Debe importarse antes que numpy: fija los hilos BLAS a partir de CAD_THREADS.
"""

import os
import logging
from dotenv import load_dotenv

# Cargar variables de entorno desde .env
load_dotenv()

# Hilos de cálculo (una ejecución de un solo hilo es reproducible byte a byte)
THREADS = int(os.getenv('CAD_THREADS', 1))
for variable in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
    os.environ.setdefault(variable, str(THREADS))

# Ejecuciones
OUT_DIR = os.getenv('CAD_OUT_DIR', 'runs')
DEFAULT_SEED = int(os.getenv('CAD_SEED', 0))
WORKERS = int(os.getenv('CAD_WORKERS', 1))

# Configuración de logging
LOG_DIR = os.getenv('CAD_LOG_DIR', 'logs')
if not os.path.exists(LOG_DIR):
    os.makedirs(LOG_DIR)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = os.path.join(LOG_DIR, 'cad.log')
LOG_LEVEL = os.getenv('CAD_LOG_LEVEL', 'INFO').upper()

# Configurar logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format=LOG_FORMAT,
    handlers=[
        logging.FileHandler(LOG_FILE),
        logging.StreamHandler()
    ]
)

# Validar configuración crítica
if THREADS < 1:
    raise ValueError("CAD_THREADS debe ser >= 1")

if WORKERS < 1:
    raise ValueError("CAD_WORKERS debe ser >= 1")
