"""
Formato binario de checkpoint con tensores nombrados

Cabecera: b"CADW", versión (u32), número de tensores (u32). Por tensor:
longitud del nombre (u32), nombre UTF-8, tipo (u8, 0 = float32), rango (u32),
extensiones (u64) y datos en orden C. Todo en little-endian.
"""

import logging
import os
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, Mapping, Tuple, Union

import numpy as np

from utils.errors import CheckpointError

MAGIC = b'CADW'
FORMAT_VERSION = 1
DTYPE_TAGS = {0: np.dtype('<f4')}

PathLike = Union[str, Path]


class TensorFile:
    """Lectura o escritura secuencial de un archivo de tensores"""

    def __init__(self, path: PathLike, mode: str = 'r'):
        """
        Abre el archivo

        Args:
            path: Ruta del archivo
            mode: 'r' para leer, 'w' para escribir
        """
        if mode not in ('r', 'w'):
            raise ValueError(f"Modo no soportado: {mode}")
        self.path = Path(path)
        self.mode = mode
        self._tmp_path = self.path.with_name(self.path.name + '.tmp')
        self.handle: BinaryIO = None
        self._open()

    def _open(self) -> None:
        try:
            if self.mode == 'r':
                self.handle = open(self.path, 'rb')
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.handle = open(self._tmp_path, 'wb')
        except OSError as e:
            logging.error(f"Error abriendo {self.path}: {e}")
            raise

    def _read(self, size: int) -> bytes:
        data = self.handle.read(size)
        if len(data) != size:
            raise CheckpointError(f"Archivo truncado: {self.path}")
        return data

    def write_all(self, tensors: Mapping[str, np.ndarray]) -> int:
        """
        Escribe la cabecera y todos los tensores en orden lexicográfico

        Returns:
            int: Bytes escritos
        """
        payload = encode_tensors(tensors)
        self.handle.write(payload)
        return len(payload)

    def read_all(self) -> Dict[str, np.ndarray]:
        """Lee la cabecera y todos los tensores"""
        magic = self._read(4)
        if magic != MAGIC:
            raise CheckpointError(f"Cabecera desconocida {magic!r} en {self.path}")
        version, count = struct.unpack('<II', self._read(8))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Versión de formato {version} no soportada en {self.path}")

        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            name, array = self._read_tensor()
            if name in tensors:
                raise CheckpointError("Nombre repetido en el checkpoint", [name])
            tensors[name] = array
        if self.handle.read(1):
            raise CheckpointError(f"Datos sobrantes al final de {self.path}")
        return tensors

    def _read_tensor(self) -> Tuple[str, np.ndarray]:
        (name_len,) = struct.unpack('<I', self._read(4))
        name = self._read(name_len).decode('utf-8')
        tag, rank = struct.unpack('<BI', self._read(5))
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"Tipo de dato {tag} no soportado para el tensor", [name])
        dtype = DTYPE_TAGS[tag]
        shape = tuple(int(x) for x in np.frombuffer(self._read(8 * rank), dtype='<u8'))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(self._read(size * dtype.itemsize), dtype=dtype)
        return name, data.reshape(shape).astype(np.float32)

    def close(self, commit: bool = True) -> None:
        """Cierra el archivo; en escritura publica el temporal sobre la ruta final"""
        if self.handle is None:
            return
        self.handle.close()
        self.handle = None
        if self.mode == 'w':
            if commit:
                os.replace(self._tmp_path, self.path)
            elif self._tmp_path.exists():
                self._tmp_path.unlink()

    def __enter__(self):
        """Soporte para context manager (with statement)"""
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Cierra el archivo; si hubo error no se publica nada"""
        self.close(commit=exc_type is None)


def _encode_one(name: str, array: np.ndarray) -> Iterator[bytes]:
    encoded = name.encode('utf-8')
    data = np.ascontiguousarray(array, dtype='<f4')
    yield struct.pack('<I', len(encoded))
    yield encoded
    yield struct.pack('<BI', 0, data.ndim)
    yield np.asarray(data.shape, dtype='<u8').tobytes()
    yield data.tobytes(order='C')


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serializa tensores nombrados (orden lexicográfico, float32)"""
    names = sorted(tensors)
    chunks = [MAGIC, struct.pack('<II', FORMAT_VERSION, len(names))]
    for name in names:
        array = np.asarray(tensors[name])
        if not np.issubdtype(array.dtype, np.floating):
            raise CheckpointError(f"Solo se guardan tensores de coma flotante ({array.dtype})", [name])
        chunks.extend(_encode_one(name, array))
    return b''.join(chunks)


def save_checkpoint(path: PathLike, tensors: Mapping[str, np.ndarray]) -> Path:
    """
    Guarda un checkpoint

    Args:
        path: Ruta de destino
        tensors: Arrays por nombre (por ejemplo, ParamSet.state())

    Returns:
        Path: Ruta escrita
    """
    with TensorFile(path, 'w') as tensor_file:
        size = tensor_file.write_all(tensors)
    logging.info(f"Checkpoint guardado: {path} ({len(tensors)} tensores, {size} bytes)")
    return Path(path)


def load_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    """
    Carga un checkpoint

    Raises:
        CheckpointError: Cabecera, versión o tipo desconocidos, o archivo truncado
        FileNotFoundError: Si la ruta no existe
    """
    with TensorFile(path, 'r') as tensor_file:
        tensors = tensor_file.read_all()
    logging.info(f"Checkpoint cargado: {path} ({len(tensors)} tensores)")
    return tensors
