import numpy as np
import pytest

from cxrlabel.normalizer import RawReport
from cxrlabel.taxonomy import load_schema

SAMPLE_FINDINGS = (
    "对比2021-03-23日片：双肺纹理增多、紊乱，见多发网格影，\n"
    "左下肺新发条片样密度增高模糊影，双肺下野见点状高密度影，\n"
    "肺门影不大，纵隔不宽，心影饱满，两膈光滑，肋膈角锐利。\n"
    "双侧顶部胸膜增厚。余大致同前。左肾可见插管影。"
)
SAMPLE_IMPRESSION = (
    "双肺间质性病变伴左下肺感染？较前进展，随诊\n"
    "双肺结节，随诊\n"
    "双下肺纤维硬结灶可能\n"
    "双侧顶部胸膜增厚"
)
BOILERPLATE = "放射科号:/身高(cm):/体重(kg):/是否肝肾功能不全:/是否碘剂过敏://"


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture
def sample_report():
    return RawReport(
        acc="01220110301300",
        findings=SAMPLE_FINDINGS,
        impression=SAMPLE_IMPRESSION,
        clinical_dx="肾造瘘术后，左",
        sex="男",
        age_raw="082Y00M20D",
        clinical_desc=BOILERPLATE + "入院检查",
    )


def write_dicom(path, pixels, wc="40\\80", ww="400\\200", photometric="MONOCHROME2",
                transfer_syntax=None, view="PA", include_pixels=True, rescale=None):
    """Write a small DICOM file with pydicom (the fixture writer)."""
    from pydicom.dataset import Dataset, FileMetaDataset
    from pydicom.uid import ExplicitVRLittleEndian, SecondaryCaptureImageStorage, generate_uid

    pixels = np.asarray(pixels, dtype=np.uint16)
    meta = FileMetaDataset()
    meta.MediaStorageSOPClassUID = SecondaryCaptureImageStorage
    meta.MediaStorageSOPInstanceUID = generate_uid(entropy_srcs=[str(path)])
    meta.TransferSyntaxUID = transfer_syntax or ExplicitVRLittleEndian
    ds = Dataset()
    ds.file_meta = meta
    ds.SOPClassUID = meta.MediaStorageSOPClassUID
    ds.SOPInstanceUID = meta.MediaStorageSOPInstanceUID
    ds.Modality = "CR"
    ds.Rows, ds.Columns = pixels.shape
    ds.SamplesPerPixel = 1
    ds.PhotometricInterpretation = photometric
    ds.BitsAllocated = 16
    ds.BitsStored = 16
    ds.HighBit = 15
    ds.PixelRepresentation = 0
    if wc is not None:
        ds.WindowCenter = wc.split("\\") if "\\" in wc else wc
    if ww is not None:
        ds.WindowWidth = ww.split("\\") if "\\" in ww else ww
    if view:
        ds.ViewPosition = view
    if rescale:
        ds.RescaleSlope, ds.RescaleIntercept = rescale
    if include_pixels and meta.TransferSyntaxUID.is_compressed:
        from pydicom.encaps import encapsulate
        ds.PixelData = encapsulate([b"\xff\xd8\xff\xd9"])
        ds["PixelData"].VR = "OB"
        ds["PixelData"].is_undefined_length = True
    elif include_pixels:
        ds.PixelData = pixels.astype("<u2").tobytes()
    ds.save_as(path, enforce_file_format=True)
    return path
