from typing import List, Optional, Sequence, Tuple

from reverb_versa.models import (
    CheckpointHeader,
    DatasetFormatError,
    DatasetHeader,
    FieldDescriptor,
    GainPattern,
    SampleRecord,
    ShoeboxRoom,
    SimulationConfig,
    TrainingConfig,
    ValidationError,
)


def create_dataset_header(
    room: ShoeboxRoom,
    emitter_pattern: GainPattern,
    listener_pattern: GainPattern,
    simulation: SimulationConfig,
    sample_rate: int,
    ir_samples: int,
    samples: Sequence[SampleRecord],
    ele_duplicates_removed: int = 0,
    ) -> DatasetHeader:
        """
        Instantiates the DatasetHeader Pydantic model.
        Returns the model instance.
        """
        header = DatasetHeader(
             room=room,
             emitter_pattern=emitter_pattern,
             listener_pattern=listener_pattern,
             simulation=simulation,
             sample_rate=sample_rate,
             ir_samples=ir_samples,
             sample_count=len(samples),
             samples=list(samples),
             ele_duplicates_removed=ele_duplicates_removed,
        )
        return header


def create_checkpoint_header(
    descriptor: FieldDescriptor,
    training: TrainingConfig,
    seed: int,
    parameter_shapes: List[Tuple[str, List[int]]],
    listener_pattern: GainPattern,
    extracted_pattern: Optional[GainPattern] = None,
    ) -> CheckpointHeader:
        return CheckpointHeader(
             descriptor=descriptor,
             training=training,
             seed=seed,
             parameter_shapes=parameter_shapes,
             listener_pattern=listener_pattern,
             extracted_pattern=extracted_pattern,
        )


def serialize_header_to_bytes(header) -> bytes:
    """
    Converts a header model to its JSON string representation,
    then encodes to UTF-8 bytes.
    """
    # model_dump_json is Pydantic V2
    return header.model_dump_json().encode('utf-8')


def parse_dataset_header(data: bytes) -> DatasetHeader:
    try:
        return DatasetHeader.model_validate_json(data)
    except ValidationError as e:
        raise DatasetFormatError(f"dataset header does not match the schema: {e}") from e


def parse_checkpoint_header(data: bytes) -> CheckpointHeader:
    try:
        return CheckpointHeader.model_validate_json(data)
    except ValidationError as e:
        raise DatasetFormatError(f"checkpoint header does not match the schema: {e}") from e
